//! Dense complex linear algebra used across the crate: norms, eigen
//! decomposition with left/right vectors, null vectors and determinants.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64 as C64;

pub type Mat = DMatrix<C64>;
pub type Vector = DVector<C64>;

pub fn zero() -> C64 {
    C64::new(0.0, 0.0)
}

pub fn one() -> C64 {
    C64::new(1.0, 0.0)
}

pub fn fro(m: &Mat) -> f64 {
    m.norm()
}

pub fn identity(n: usize) -> Mat {
    Mat::identity(n, n)
}

pub fn commutator(a: &Mat, b: &Mat) -> Mat {
    a * b - b * a
}

/// ||[a, b]|| together with the scale ||a|| ||b||.
pub fn commutator_residual(a: &Mat, b: &Mat) -> Residual {
    Residual::new(fro(&commutator(a, b)), fro(a) * fro(b))
}

/// ||m - (tr m / n) Id|| / ||m||.
pub fn off_scalar(m: &Mat) -> (C64, f64) {
    let n = m.nrows();
    let s = m.trace() / n as f64;
    let dev = (m - Mat::identity(n, n) * s).norm();
    let nm = m.norm();
    (s, if nm > 0.0 { dev / nm } else { 0.0 })
}

/// Raw residual with the scale used to normalize it.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Residual {
    pub raw: f64,
    pub scale: f64,
}

impl Residual {
    pub fn new(raw: f64, scale: f64) -> Self {
        Residual { raw, scale }
    }

    pub fn rel(&self) -> f64 {
        if self.scale > 0.0 {
            self.raw / self.scale
        } else {
            self.raw
        }
    }

    pub fn max(self, o: Residual) -> Residual {
        if o.rel() > self.rel() {
            o
        } else {
            self
        }
    }
}

/// Eigen decomposition m = V diag(w) V^{-1}; the rows of `left` are the
/// dual (left) eigenvectors, so left * right = Id.
#[derive(Clone, Debug)]
pub struct Eigen {
    pub values: Vec<C64>,
    pub right: Mat,
    pub left: Mat,
}

/// Complex Schur form (Q, T) with a bounded QR iteration count.
/// Eigenvalues symmetric under sign flips can stall the shifted QR, so
/// stalls are retried on m + sI with a few fixed complex shifts.
pub fn schur(m: Mat) -> Option<(Mat, Mat)> {
    let n = m.nrows().max(1);
    let scale = m.norm() / (n as f64).sqrt();
    for s in [0.0, 0.137, 0.291, 0.533] {
        let shift = C64::from_polar(s * scale, 0.61 + s);
        let mut ms = m.clone();
        for i in 0..m.nrows() {
            ms[(i, i)] += shift;
        }
        if let Some(sch) = nalgebra::Schur::try_new(ms, f64::EPSILON, 200 * n) {
            let (q, mut t) = sch.unpack();
            for i in 0..t.nrows() {
                t[(i, i)] -= shift;
            }
            return Some((q, t));
        }
    }
    None
}

/// Complex Schur form followed by triangular back substitution. Intended for
/// diagonalizable matrices with well separated eigenvalues.
pub fn eigen(m: &Mat) -> Option<Eigen> {
    let n = m.nrows();
    let scale = m.norm().max(f64::MIN_POSITIVE);
    let (q, t) = schur(m.clone())?;
    let values: Vec<C64> = (0..n).map(|i| t[(i, i)]).collect();
    let mut x = Mat::zeros(n, n);
    let tiny = 1e-14 * scale;
    for i in 0..n {
        x[(i, i)] = one();
        for j in (0..i).rev() {
            let mut s = zero();
            for k in j + 1..=i {
                s += t[(j, k)] * x[(k, i)];
            }
            let mut den = t[(j, j)] - values[i];
            if den.norm() < tiny {
                den = C64::new(tiny, 0.0);
            }
            x[(j, i)] = -s / den;
        }
        let nrm = x.column(i).norm();
        x.column_mut(i).unscale_mut(nrm);
    }
    let right = q * x;
    let left = right.clone().try_inverse()?;
    Some(Eigen { values, right, left })
}

/// Right singular vector for the smallest singular value, with the ordered
/// singular values (descending).
pub fn null_vector(m: &Mat) -> (Vector, Vec<f64>) {
    let ncols = m.ncols();
    // pad wide systems so that V is square
    let work = if m.nrows() < ncols {
        let mut w = Mat::zeros(ncols, ncols);
        w.view_mut((0, 0), (m.nrows(), ncols)).copy_from(m);
        w
    } else {
        m.clone()
    };
    let svd = work.svd(false, true);
    let vt = svd.v_t.expect("requested v_t");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].partial_cmp(&svd.singular_values[a]).unwrap());
    let sv: Vec<f64> = order.iter().map(|&i| svd.singular_values[i]).collect();
    let last = *order.last().unwrap();
    let v = vt.row(last).adjoint();
    (v, sv)
}

pub fn singular_values(m: &Mat) -> Vec<f64> {
    let mut s: Vec<f64> = m.clone().svd(false, false).singular_values.iter().copied().collect();
    s.sort_by(|a, b| b.partial_cmp(a).unwrap());
    s
}

pub fn det(m: &Mat) -> C64 {
    m.clone().lu().determinant()
}

/// Scale a vector so that its largest-modulus component (first one on ties) is 1.
pub fn normalize_max(v: &mut [C64]) {
    let mut best = 0usize;
    let mut bm = -1.0;
    for (i, x) in v.iter().enumerate() {
        if x.norm() > bm * (1.0 + 1e-12) {
            bm = x.norm();
            best = i;
        }
    }
    if bm > 0.0 {
        let s = v[best];
        for x in v.iter_mut() {
            *x /= s;
        }
    }
}

/// min_c ||a - c b|| / ||a||, with the minimizing c.
pub fn proportionality(a: &[C64], b: &[C64]) -> (f64, C64) {
    let bb: f64 = b.iter().map(|x| x.norm_sqr()).sum();
    let ab: C64 = a.iter().zip(b).map(|(x, y)| y.conj() * x).sum();
    let na: f64 = a.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
    if bb == 0.0 || na == 0.0 {
        return (if na == 0.0 && bb == 0.0 { 0.0 } else { 1.0 }, zero());
    }
    let c = ab / bb;
    let r: f64 = a.iter().zip(b).map(|(x, y)| (x - c * y).norm_sqr()).sum::<f64>().sqrt();
    (r / na, c)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(n: usize) -> Mat {
        Mat::from_fn(n, n, |i, j| {
            let h = ((i * 31 + j * 17 + i * j * 7) % 23) as f64;
            C64::new((h * 1.3).sin(), (h * 0.7 + i as f64).cos())
        })
    }

    #[test]
    fn eigen_reconstructs() {
        let m = sample(9);
        let e = eigen(&m).unwrap();
        let d = Mat::from_diagonal(&Vector::from_vec(e.values.clone()));
        let rec = &e.right * d * &e.left;
        assert!((rec - &m).norm() < 1e-10 * m.norm());
        for i in 0..9 {
            let v = e.right.column(i);
            assert!((&m * v - v * e.values[i]).norm() < 1e-10 * m.norm());
            let w = e.left.row(i);
            assert!((w * &m - w * e.values[i]).norm() < 1e-9 * m.norm() * w.norm());
        }
    }

    #[test]
    fn null_vector_finds_kernel() {
        let mut m = sample(6);
        let v = Vector::from_fn(6, |i, _| C64::new(i as f64 + 1.0, 0.5));
        let mv = &m * &v;
        // project out the image of v to create a kernel
        let nv = v.norm_squared();
        for r in 0..6 {
            for cidx in 0..6 {
                m[(r, cidx)] -= mv[r] * v[cidx].conj() / nv;
            }
        }
        let (k, sv) = null_vector(&m);
        assert!(sv[5] < 1e-12 * sv[0]);
        let (res, _) = proportionality(k.as_slice(), v.as_slice());
        assert!(res < 1e-10);
    }

    #[test]
    fn max_normalization() {
        let mut v = vec![C64::new(1.0, 0.0), C64::new(0.0, -3.0), C64::new(2.0, 0.0)];
        normalize_max(&mut v);
        assert_eq!(v[1], C64::new(1.0, 0.0));
    }
}
