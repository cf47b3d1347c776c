//! Cyclic representation of the local Weyl pairs (u_n, v_n) on the
//! p^N-dimensional tensor space, and the grading charge Theta = prod v_n.
//!
//! Basis states |z_1..z_N> with z_n = q^{2k_n} are indexed by the base-p
//! number with digit k_1 least significant. v_n sends z_n to q z_n, which on
//! the digit is the shift k -> k + l + 1 (mod p).

use num_complex::Complex64 as C64;
use thiserror::Error;

use crate::algebra::UnityRoot;
use crate::linalg::{one, zero, Mat};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WeylError {
    #[error("site {site} out of range 1..={n}")]
    SiteOutOfRange { site: usize, n: usize },
    #[error("dimension p^N = {0} exceeds the supported maximum")]
    TooLarge(usize),
}

pub const MAX_DIM: usize = 3125;

/// Digits (k_1, .., k_N), site 1 least significant.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct StateIndex {
    pub digits: Vec<usize>,
}

impl StateIndex {
    pub fn from_index(idx: usize, p: usize, n: usize) -> Self {
        let mut digits = Vec::with_capacity(n);
        let mut r = idx;
        for _ in 0..n {
            digits.push(r % p);
            r /= p;
        }
        StateIndex { digits }
    }

    pub fn to_index(&self, p: usize) -> usize {
        self.digits.iter().rev().fold(0, |acc, &d| acc * p + d)
    }
}

/// Operator on a single site as a p x p matrix, stored by its nonzero entries.
#[derive(Clone, Debug)]
pub struct LocalOp {
    pub p: usize,
    entries: Vec<(usize, usize, C64)>,
}

impl LocalOp {
    pub fn from_dense(m: &Mat) -> Self {
        let p = m.nrows();
        let mut entries = Vec::new();
        for j in 0..p {
            for i in 0..p {
                if m[(i, j)] != zero() {
                    entries.push((i, j, m[(i, j)]));
                }
            }
        }
        LocalOp { p, entries }
    }

    pub fn to_dense(&self) -> Mat {
        let mut m = Mat::zeros(self.p, self.p);
        for &(i, j, v) in &self.entries {
            m[(i, j)] += v;
        }
        m
    }
}

#[derive(Clone, Debug)]
pub struct Space {
    pub root: UnityRoot,
    pub n_sites: usize,
    pub dim: usize,
}

impl Space {
    pub fn new(root: UnityRoot, n_sites: usize) -> Result<Self, WeylError> {
        let dim = root.p.checked_pow(n_sites as u32).unwrap_or(usize::MAX);
        if dim > MAX_DIM {
            return Err(WeylError::TooLarge(dim));
        }
        Ok(Space { root, n_sites, dim })
    }

    pub fn p(&self) -> usize {
        self.root.p
    }

    pub fn state(&self, idx: usize) -> StateIndex {
        StateIndex::from_index(idx, self.p(), self.n_sites)
    }

    fn stride(&self, site: usize) -> usize {
        self.p().pow(site as u32 - 1)
    }

    pub fn digit(&self, idx: usize, site: usize) -> usize {
        (idx / self.stride(site)) % self.p()
    }

    fn check(&self, site: usize) -> Result<(), WeylError> {
        if site == 0 || site > self.n_sites {
            Err(WeylError::SiteOutOfRange { site, n: self.n_sites })
        } else {
            Ok(())
        }
    }

    /// Digit shift implementing z -> q z.
    pub fn shift(&self) -> usize {
        self.root.l + 1
    }

    pub fn local_u(&self) -> Mat {
        let p = self.p();
        Mat::from_fn(p, p, |i, j| if i == j { self.root.pow(2 * i as i64) } else { zero() })
    }

    pub fn local_v(&self) -> Mat {
        let p = self.p();
        let s = self.shift();
        Mat::from_fn(p, p, |i, j| if i == (j + s) % p { one() } else { zero() })
    }

    pub fn local_v_inv(&self) -> Mat {
        self.local_v().adjoint()
    }

    pub fn local_u_inv(&self) -> Mat {
        self.local_u().adjoint()
    }

    /// Dense embedding of a site-local p x p matrix.
    pub fn embed(&self, site: usize, local: &Mat) -> Result<Mat, WeylError> {
        self.check(site)?;
        Ok(self.apply_left(site, &LocalOp::from_dense(local), &Mat::identity(self.dim, self.dim)))
    }

    pub fn site_u(&self, site: usize) -> Result<Mat, WeylError> {
        self.embed(site, &self.local_u())
    }

    pub fn site_v(&self, site: usize) -> Result<Mat, WeylError> {
        self.embed(site, &self.local_v())
    }

    /// (local at `site`) * x, in O(nnz * dim * cols).
    pub fn apply_left(&self, site: usize, op: &LocalOp, x: &Mat) -> Mat {
        let s = self.stride(site);
        let p = self.p();
        let mut y = Mat::zeros(x.nrows(), x.ncols());
        for col in 0..x.ncols() {
            let xc = x.column(col);
            let mut yc = y.column_mut(col);
            for r in 0..self.dim {
                let d = (r / s) % p;
                let base = r - d * s;
                let mut acc = zero();
                for &(i, j, v) in &op.entries {
                    if i == d {
                        acc += v * xc[base + j * s];
                    }
                }
                yc[r] = acc;
            }
        }
        y
    }

    /// Theta = prod_n v_n as a permutation matrix.
    pub fn theta(&self) -> Mat {
        let mut m = Mat::zeros(self.dim, self.dim);
        for idx in 0..self.dim {
            m[(self.theta_image(idx), idx)] = one();
        }
        m
    }

    /// Index of Theta |idx>.
    pub fn theta_image(&self, idx: usize) -> usize {
        let p = self.p();
        let mut st = self.state(idx);
        for d in st.digits.iter_mut() {
            *d = (*d + self.shift()) % p;
        }
        st.to_index(p)
    }

    /// Orthonormal basis (columns) of the Theta = q^k eigenspace. Orbit
    /// representatives are the states with k_1 = 0.
    pub fn sector_basis(&self, k: usize) -> Mat {
        let p = self.p();
        let reps: Vec<usize> = (0..self.dim).filter(|&i| i % p == 0).collect();
        let mut m = Mat::zeros(self.dim, reps.len());
        let norm = 1.0 / (p as f64).sqrt();
        for (col, &r) in reps.iter().enumerate() {
            let mut idx = r;
            for j in 0..p {
                m[(idx, col)] = self.root.pow(-((k * j) as i64)) * norm;
                idx = self.theta_image(idx);
            }
        }
        m
    }

    /// Projectors P_k onto Theta = q^k, k = 0..p.
    pub fn theta_eigenprojectors(&self) -> Vec<(usize, Mat)> {
        (0..self.p())
            .map(|k| {
                let v = self.sector_basis(k);
                (k, &v * v.adjoint())
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn space(p: usize, n: usize) -> Space {
        Space::new(UnityRoot::new(p, 2).unwrap(), n).unwrap()
    }

    #[test]
    fn state_index_roundtrip() {
        let s = StateIndex::from_index(47, 5, 3);
        assert_eq!(s.digits, vec![2, 4, 1]);
        assert_eq!(s.to_index(5), 47);
    }

    #[test]
    fn weyl_relations() {
        let sp = space(3, 3);
        let q = sp.root.q;
        for n in 1..=3 {
            let un = sp.site_u(n).unwrap();
            for m in 1..=3 {
                let vm = sp.site_v(m).unwrap();
                let f = if n == m { q } else { one() };
                assert!((&un * &vm - &vm * &un * f).norm() < 1e-13);
            }
            let vn = sp.site_v(n).unwrap();
            let mut vp = Mat::identity(sp.dim, sp.dim);
            let mut up = Mat::identity(sp.dim, sp.dim);
            for _ in 0..3 {
                vp = &vp * &vn;
                up = &up * &un;
            }
            assert!((vp - Mat::identity(sp.dim, sp.dim)).norm() < 1e-13);
            assert!((up - Mat::identity(sp.dim, sp.dim)).norm() < 1e-13);
        }
        assert!(sp.site_u(4).is_err());
        assert!(sp.site_v(0).is_err());
    }

    #[test]
    fn z_shift_convention() {
        // v |z> = |q z> on a single site
        let sp = space(5, 1);
        let v = sp.local_v();
        for k in 0..5 {
            let img = (0..5).find(|&i| v[(i, k)] == one()).unwrap();
            let z = sp.root.pow(2 * k as i64);
            let zi = sp.root.pow(2 * img as i64);
            assert!((zi - sp.root.q * z).norm() < 1e-14);
        }
    }

    #[test]
    fn theta_and_projectors() {
        let sp = space(3, 2);
        let th = sp.theta();
        let mut t = Mat::identity(sp.dim, sp.dim);
        for n in 1..=2 {
            t = sp.site_v(n).unwrap() * t;
        }
        assert!((&t - &th).norm() < 1e-14);
        let mut th3 = Mat::identity(sp.dim, sp.dim);
        for _ in 0..3 {
            th3 = &th3 * &th;
        }
        assert!((th3 - Mat::identity(sp.dim, sp.dim)).norm() < 1e-13);
        let ps = sp.theta_eigenprojectors();
        let mut sum = Mat::zeros(sp.dim, sp.dim);
        for (k, pk) in &ps {
            assert!((&th * pk - pk * sp.root.pow(*k as i64)).norm() < 1e-13);
            assert!((pk.trace().re - 3.0).abs() < 1e-12);
            for (k2, pk2) in &ps {
                if k2 != k {
                    assert!((pk * pk2).norm() < 1e-13);
                }
            }
            sum += pk;
        }
        assert!((sum - Mat::identity(sp.dim, sp.dim)).norm() < 1e-13);
    }

    #[test]
    fn theta_spectrum_multiplicities() {
        let sp = space(3, 3);
        let ev = sp.theta().schur().eigenvalues().unwrap();
        for k in 0..3 {
            let qk = sp.root.pow(k);
            let count = ev.iter().filter(|e| (*e - qk).norm() < 1e-8).count();
            assert_eq!(count, 9);
        }
    }
}
