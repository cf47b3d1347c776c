//! Complex Laurent polynomials, root-of-unity scalars, least-squares
//! interpolation on geometric grids and root-set bookkeeping.

use std::f64::consts::PI;
use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default relative drop threshold for stored coefficients.
pub const DROP_REL: f64 = 1e-12;
/// Relative tolerance for matching roots in p-string and conjugation checks.
pub const ROOT_MATCH_REL: f64 = 1e-6;
/// Radius of the default interpolation grid.
pub const GRID_RADIUS: f64 = 1.17;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AlgebraError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("ill-conditioned interpolation (condition estimate {cond:.3e})")]
    Conditioning { cond: f64 },
    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("invalid root of unity: {0}")]
    BadRoot(String),
}

pub type Result<T> = std::result::Result<T, AlgebraError>;

pub fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

/// q = exp(-i pi p'/p) with p = 2l+1 and p' = 2l'.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UnityRoot {
    pub p: usize,
    pub l: usize,
    pub p_prime: usize,
    pub q: C64,
}

impl UnityRoot {
    pub fn new(p: usize, p_prime: usize) -> Result<Self> {
        if p < 3 || p.is_multiple_of(2) {
            return Err(AlgebraError::BadRoot(format!("p = {p} must be odd and >= 3")));
        }
        if p_prime < 2 || p_prime % 2 == 1 {
            return Err(AlgebraError::BadRoot(format!(
                "p' = {p_prime} must be even and >= 2"
            )));
        }
        let mut r = UnityRoot { p, l: (p - 1) / 2, p_prime, q: C64::new(1.0, 0.0) };
        r.q = r.pow(1);
        Ok(r)
    }

    pub fn l_prime(&self) -> usize {
        self.p_prime / 2
    }

    /// q^j, with the phase reduced exactly before evaluation.
    pub fn pow(&self, j: i64) -> C64 {
        let m = (self.p_prime as i64 * j).rem_euclid(2 * self.p as i64);
        C64::from_polar(1.0, -PI * m as f64 / self.p as f64)
    }

    /// q^{j/2} on the principal branch q^{1/2} = exp(-i pi p'/(2p)).
    pub fn half_pow(&self, j: i64) -> C64 {
        let m = (self.p_prime as i64 * j).rem_euclid(4 * self.p as i64);
        C64::from_polar(1.0, -PI * m as f64 / (2 * self.p) as f64)
    }

    pub fn is_primitive(&self) -> bool {
        gcd(self.p, self.p_prime) == 1
    }
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Parity {
    Even,
    Odd,
    None,
}

impl Parity {
    pub fn of(n: usize) -> Parity {
        if n.is_multiple_of(2) {
            Parity::Even
        } else {
            Parity::Odd
        }
    }

    pub fn admits(self, e: i32) -> bool {
        match self {
            Parity::Even => e.rem_euclid(2) == 0,
            Parity::Odd => e.rem_euclid(2) == 1,
            Parity::None => true,
        }
    }
}

/// Laurent polynomial sum_e c_e z^e, stored densely from exponent `lo`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LaurentPoly {
    lo: i32,
    coeffs: Vec<C64>,
    parity: Parity,
}

impl LaurentPoly {
    pub fn zero() -> Self {
        LaurentPoly { lo: 0, coeffs: Vec::new(), parity: Parity::None }
    }

    pub fn constant(c: C64) -> Self {
        Self::monomial(0, c)
    }

    pub fn monomial(e: i32, c: C64) -> Self {
        Self::from_coeffs(e, vec![c])
    }

    /// Coefficients of z^lo, z^{lo+1}, ...
    pub fn from_coeffs(lo: i32, coeffs: Vec<C64>) -> Self {
        let mut f = LaurentPoly { lo, coeffs, parity: Parity::None };
        f.trim();
        f
    }

    pub fn from_terms(terms: &[(i32, C64)]) -> Self {
        let mut f = Self::zero();
        for &(e, c) in terms {
            f = &f + &Self::monomial(e, c);
        }
        f
    }

    /// Product of (z/r - r/z) over the given r.
    pub fn from_sinh_roots(roots: &[C64]) -> Self {
        roots.iter().fold(Self::constant(C64::new(1.0, 0.0)), |acc, &r| {
            &acc * &Self::from_terms(&[(1, 1.0 / r), (-1, -r)])
        })
    }

    fn trim(&mut self) {
        while matches!(self.coeffs.last(), Some(c) if *c == C64::new(0.0, 0.0)) {
            self.coeffs.pop();
        }
        let lead = self.coeffs.iter().take_while(|c| **c == C64::new(0.0, 0.0)).count();
        if lead == self.coeffs.len() {
            self.coeffs.clear();
            self.lo = 0;
            return;
        }
        self.coeffs.drain(..lead);
        self.lo += lead as i32;
    }

    /// Zero every coefficient below `rel` times the largest modulus.
    pub fn pruned(&self, rel: f64) -> Self {
        let m = self.max_abs();
        let mut f = self.clone();
        for v in f.coeffs.iter_mut() {
            if v.norm() <= rel * m {
                *v = C64::new(0.0, 0.0);
            }
        }
        f.trim();
        f
    }

    pub fn with_parity(mut self, parity: Parity) -> Self {
        self.parity = parity;
        self
    }

    /// Zero out the coefficients that do not match `parity` and tag the result.
    pub fn project_parity(&self, parity: Parity) -> Self {
        let mut f = self.clone();
        for (i, v) in f.coeffs.iter_mut().enumerate() {
            if !parity.admits(self.lo + i as i32) {
                *v = C64::new(0.0, 0.0);
            }
        }
        f.trim();
        f.parity = parity;
        f
    }

    pub fn parity(&self) -> Parity {
        self.parity
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.is_empty()
    }

    pub fn lo(&self) -> i32 {
        self.lo
    }

    pub fn hi(&self) -> i32 {
        self.lo + self.coeffs.len() as i32 - 1
    }

    /// max |e| over stored exponents.
    pub fn degree(&self) -> usize {
        if self.is_zero() {
            0
        } else {
            self.lo.unsigned_abs().max(self.hi().unsigned_abs()) as usize
        }
    }

    pub fn coeff(&self, e: i32) -> C64 {
        let i = e - self.lo;
        if i < 0 || i as usize >= self.coeffs.len() {
            C64::new(0.0, 0.0)
        } else {
            self.coeffs[i as usize]
        }
    }

    pub fn terms(&self) -> impl Iterator<Item = (i32, C64)> + '_ {
        self.coeffs.iter().enumerate().map(move |(i, c)| (self.lo + i as i32, *c))
    }

    pub fn max_abs(&self) -> f64 {
        self.coeffs.iter().fold(0.0, |m, c| m.max(c.norm()))
    }

    /// Largest coefficient modulus whose exponent has the wrong parity.
    pub fn parity_leak(&self, parity: Parity) -> f64 {
        self.terms().filter(|(e, _)| !parity.admits(*e)).fold(0.0, |m, (_, c)| m.max(c.norm()))
    }

    pub fn eval(&self, z: C64) -> Result<C64> {
        if z == C64::new(0.0, 0.0) {
            return Err(AlgebraError::Domain("Laurent polynomial evaluated at 0".into()));
        }
        Ok(self.value(z))
    }

    /// Evaluation by Horner over the non-negative and negative parts separately.
    /// Panics on z = 0.
    pub fn value(&self, z: C64) -> C64 {
        assert!(z != C64::new(0.0, 0.0), "Laurent polynomial evaluated at 0");
        if self.is_zero() {
            return C64::new(0.0, 0.0);
        }
        let zero = C64::new(0.0, 0.0);
        let mut pos = zero;
        let e0 = self.lo.max(0);
        if self.hi() >= 0 {
            for e in (e0..=self.hi()).rev() {
                pos = pos * z + self.coeff(e);
            }
            pos *= z.powi(e0);
        }
        let mut neg = zero;
        let e1 = self.hi().min(-1);
        if self.lo < 0 {
            let w = 1.0 / z;
            for e in self.lo..=e1 {
                neg = neg * w + self.coeff(e);
            }
            neg *= w.powi(-e1);
        }
        pos + neg
    }

    pub fn scale(&self, s: C64) -> Self {
        let mut f = LaurentPoly::from_coeffs(self.lo, self.coeffs.iter().map(|c| c * s).collect());
        f.parity = self.parity;
        f
    }

    /// z -> f(c z).
    pub fn dilate(&self, c: C64) -> Self {
        let mut f = LaurentPoly::from_coeffs(
            self.lo,
            self.terms().map(|(e, v)| v * c.powi(e)).collect(),
        );
        f.parity = self.parity;
        f
    }

    /// Coefficients of z^{-lo} f(z) in ascending order.
    pub fn polynomial_part(&self) -> Vec<C64> {
        self.coeffs.clone()
    }

    /// sup-norm distance of coefficient vectors.
    pub fn coeff_distance(&self, other: &LaurentPoly) -> f64 {
        let diff = self - other;
        diff.max_abs()
    }
}

impl fmt::Display for LaurentPoly {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_zero() {
            return write!(f, "0");
        }
        let parts: Vec<String> = self
            .terms()
            .filter(|(_, c)| c.norm() > 0.0)
            .map(|(e, c)| format!("({:.6e}{:+.6e}i)z^{}", c.re, c.im, e))
            .collect();
        write!(f, "{}", parts.join(" + "))
    }
}

impl Add for &LaurentPoly {
    type Output = LaurentPoly;
    fn add(self, o: &LaurentPoly) -> LaurentPoly {
        if self.is_zero() {
            return o.clone();
        }
        if o.is_zero() {
            return self.clone();
        }
        let lo = self.lo.min(o.lo);
        let hi = self.hi().max(o.hi());
        let coeffs = (lo..=hi).map(|e| self.coeff(e) + o.coeff(e)).collect();
        let mut f = LaurentPoly::from_coeffs(lo, coeffs);
        if self.parity == o.parity {
            f.parity = self.parity;
        }
        f
    }
}

impl Sub for &LaurentPoly {
    type Output = LaurentPoly;
    fn sub(self, o: &LaurentPoly) -> LaurentPoly {
        self + &(-o)
    }
}

impl Neg for &LaurentPoly {
    type Output = LaurentPoly;
    fn neg(self) -> LaurentPoly {
        self.scale(C64::new(-1.0, 0.0))
    }
}

impl Mul for &LaurentPoly {
    type Output = LaurentPoly;
    fn mul(self, o: &LaurentPoly) -> LaurentPoly {
        if self.is_zero() || o.is_zero() {
            return LaurentPoly::zero();
        }
        let mut out = vec![C64::new(0.0, 0.0); self.coeffs.len() + o.coeffs.len() - 1];
        for (i, a) in self.coeffs.iter().enumerate() {
            for (j, b) in o.coeffs.iter().enumerate() {
                out[i + j] += a * b;
            }
        }
        let mut f = LaurentPoly::from_coeffs(self.lo + o.lo, out);
        f.parity = match (self.parity, o.parity) {
            (Parity::None, _) | (_, Parity::None) => Parity::None,
            (a, b) if a == b => Parity::Even,
            _ => Parity::Odd,
        };
        f
    }
}

impl Add for LaurentPoly {
    type Output = LaurentPoly;
    fn add(self, o: LaurentPoly) -> LaurentPoly {
        &self + &o
    }
}

impl Sub for LaurentPoly {
    type Output = LaurentPoly;
    fn sub(self, o: LaurentPoly) -> LaurentPoly {
        &self - &o
    }
}

impl Mul for LaurentPoly {
    type Output = LaurentPoly;
    fn mul(self, o: LaurentPoly) -> LaurentPoly {
        &self * &o
    }
}

/// Geometric grid rho * exp(2 pi i j / m), j = 0..m.
pub fn circle_grid(m: usize, rho: f64) -> Vec<C64> {
    (0..m).map(|j| C64::from_polar(rho, 2.0 * PI * j as f64 / m as f64)).collect()
}

#[derive(Clone, Debug)]
pub struct Interpolant {
    pub poly: LaurentPoly,
    /// max |f(z_j) - v_j| after parity projection.
    pub residual: f64,
    /// max |v_j|.
    pub scale: f64,
    pub condition: f64,
}

/// Least-squares Laurent fit of the given degree.
///
/// With a parity tag and at least 2*degree+1 samples the full fit is done
/// first and then projected, so the reported residual exposes parity
/// violations; with fewer samples the fit is restricted to the admitted
/// exponents.
pub fn laurent_interpolate(
    samples: &[(C64, C64)],
    degree: usize,
    parity: Parity,
) -> Result<Interpolant> {
    let d = degree as i32;
    let full: Vec<i32> = (-d..=d).collect();
    let restricted: Vec<i32> = full.iter().copied().filter(|e| parity.admits(*e)).collect();
    let exps = if parity == Parity::None || samples.len() >= full.len() {
        full
    } else {
        restricted
    };
    if samples.len() < exps.len() {
        return Err(AlgebraError::TooFewSamples { needed: exps.len(), got: samples.len() });
    }
    for (i, (z, _)) in samples.iter().enumerate() {
        if z.norm() == 0.0 {
            return Err(AlgebraError::Domain("interpolation node at 0".into()));
        }
        if samples[..i].iter().any(|(w, _)| (w - z).norm() <= 1e-14 * z.norm()) {
            return Err(AlgebraError::Domain("repeated interpolation node".into()));
        }
    }
    let rows = samples.len();
    let cols = exps.len();
    let mut v = DMatrix::<C64>::from_fn(rows, cols, |i, j| samples[i].0.powi(exps[j]));
    let mut colscale = vec![1.0; cols];
    for j in 0..cols {
        let n = v.column(j).norm();
        colscale[j] = n;
        v.column_mut(j).scale_mut(1.0 / n);
    }
    let rhs = DVector::<C64>::from_iterator(rows, samples.iter().map(|s| s.1));
    let scale = samples.iter().fold(0.0f64, |m, s| m.max(s.1.norm()));
    let svd = v.svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    let cond = if smin > 0.0 { smax / smin } else { f64::INFINITY };
    if !(cond < 1e13) {
        return Err(AlgebraError::Conditioning { cond });
    }
    let x = svd.solve(&rhs, 0.0).map_err(|e| AlgebraError::Domain(e.to_string()))?;
    let lo = exps[0];
    let mut coeffs = vec![C64::new(0.0, 0.0); (exps[cols - 1] - lo + 1) as usize];
    for j in 0..cols {
        coeffs[(exps[j] - lo) as usize] = x[j] / colscale[j];
    }
    let raw = LaurentPoly::from_coeffs(lo, coeffs);
    let poly = if parity == Parity::None { raw } else { raw.project_parity(parity) };
    let residual = samples.iter().fold(0.0f64, |m, (z, val)| m.max((poly.value(*z) - val).norm()));
    Ok(Interpolant { poly, residual, scale, condition: cond })
}

/// Eigenvalues of the companion matrix of a monic-normalized polynomial,
/// coefficients ascending. The variable is rescaled by the geometric mean
/// root modulus first; a stalled QR iteration yields no roots.
fn companion_roots(p: &[C64]) -> Vec<C64> {
    let n = p.len() - 1;
    if n == 0 {
        return Vec::new();
    }
    let lead = p[n];
    let low = p.iter().position(|c| c.norm() > 0.0).unwrap_or(0);
    let s = if low < n { (p[low].norm() / lead.norm()).powf(1.0 / (n - low) as f64) } else { 1.0 };
    let s = if s.is_finite() && s > 0.0 { s } else { 1.0 };
    let mut m = DMatrix::<C64>::zeros(n, n);
    for i in 1..n {
        m[(i, i - 1)] = C64::new(1.0, 0.0);
    }
    for i in 0..n {
        m[(i, n - 1)] = -p[i] / lead * s.powi(i as i32 - n as i32);
    }
    crate::linalg::schur(m)
        .map(|(_, t)| (0..n).map(|i| t[(i, i)] * s).collect())
        .unwrap_or_default()
}

fn horner(p: &[C64], z: C64) -> (C64, C64) {
    let mut f = C64::new(0.0, 0.0);
    let mut df = C64::new(0.0, 0.0);
    for &c in p.iter().rev() {
        df = df * z + f;
        f = f * z + c;
    }
    (f, df)
}

/// All nonzero roots of f with multiplicity (count = hi - lo), Newton polished.
pub fn poly_roots(f: &LaurentPoly) -> Vec<C64> {
    let p = f.polynomial_part();
    if p.len() <= 1 {
        return Vec::new();
    }
    let mut roots = companion_roots(&p);
    for r in roots.iter_mut() {
        let mut z = *r;
        for _ in 0..4 {
            let (v, dv) = horner(&p, z);
            if dv.norm() == 0.0 {
                break;
            }
            let step = v / dv;
            let nz = z - step;
            if !(nz.re.is_finite() && nz.im.is_finite()) {
                break;
            }
            if horner(&p, nz).0.norm() > v.norm() {
                break;
            }
            z = nz;
        }
        *r = z;
    }
    sort_roots(&mut roots);
    roots
}

/// Deterministic ordering: by modulus then argument.
pub fn sort_roots(r: &mut [C64]) {
    r.sort_by(|a, b| {
        a.norm()
            .partial_cmp(&b.norm())
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.arg().partial_cmp(&b.arg()).unwrap_or(std::cmp::Ordering::Equal))
    });
}

/// Monic polynomial prod (z - r_i), returned as a Laurent poly from exponent 0.
pub fn monic_from_roots(roots: &[C64]) -> LaurentPoly {
    roots.iter().fold(LaurentPoly::constant(C64::new(1.0, 0.0)), |acc, &r| {
        &acc * &LaurentPoly::from_coeffs(0, vec![-r, C64::new(1.0, 0.0)])
    })
}

pub fn roots_match(a: C64, b: C64, rel: f64) -> bool {
    (a - b).norm() / a.norm().max(1.0) < rel
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RootSetReport {
    pub p_string_free: bool,
    pub epsilon_self_adjoint: bool,
    /// Largest distance between a root and its conjugation partner.
    pub conjugation_mismatch: f64,
}

fn greedy_match(src: &[C64], dst: &[C64], rel: f64) -> Option<f64> {
    let mut used = vec![false; dst.len()];
    let mut worst = 0.0f64;
    for a in src {
        let mut best: Option<(usize, f64)> = None;
        for (j, b) in dst.iter().enumerate() {
            if used[j] {
                continue;
            }
            let d = (a - b).norm() / a.norm().max(1.0);
            if best.is_none_or(|(_, bd)| d < bd) {
                best = Some((j, d));
            }
        }
        match best {
            Some((j, d)) if d < rel => {
                used[j] = true;
                worst = worst.max(d);
            }
            _ => return None,
        }
    }
    Some(worst)
}

pub fn has_p_string(roots: &[C64], q: &UnityRoot, rel: f64) -> bool {
    roots.iter().any(|&r0| {
        let string: Vec<C64> = (0..q.p as i64).map(|j| q.pow(j) * r0).collect();
        greedy_match(&string, roots, rel).is_some()
    })
}

pub fn root_set_checks(roots: &[C64], q: &UnityRoot, epsilon: i32) -> RootSetReport {
    let eps = epsilon as f64;
    let image: Vec<C64> = roots.iter().map(|r| r.conj() * eps).collect();
    let m = greedy_match(&image, roots, ROOT_MATCH_REL);
    RootSetReport {
        p_string_free: !has_p_string(roots, q, ROOT_MATCH_REL),
        epsilon_self_adjoint: m.is_some(),
        conjugation_mismatch: m.unwrap_or(f64::INFINITY),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn naive(f: &LaurentPoly, z: C64) -> C64 {
        f.terms().map(|(e, c)| c * z.powi(e)).sum()
    }

    #[test]
    fn unity_root_basics() {
        let r = UnityRoot::new(5, 2).unwrap();
        assert!((r.q.norm() - 1.0).abs() < 1e-15);
        assert!((r.pow(5) - 1.0).norm() < 1e-15);
        assert!((r.q.powi(5) - 1.0).norm() < 1e-14);
        for j in 1..5 {
            assert!((r.pow(j) - 1.0).norm() > 1e-3);
        }
        assert!((r.half_pow(2) - r.q).norm() < 1e-15);
        assert!((r.half_pow(1) * r.half_pow(1) - r.q).norm() < 1e-15);
        assert!(UnityRoot::new(4, 2).is_err());
        assert!(UnityRoot::new(3, 3).is_err());
    }

    #[test]
    fn eval_trivial() {
        let f = LaurentPoly::from_terms(&[(1, c(1.0, 0.0)), (-1, c(-1.0, 0.0))]);
        assert_eq!(f.value(c(1.0, 0.0)), c(0.0, 0.0));
        let g = LaurentPoly::monomial(2, c(1.0, 0.0)).with_parity(Parity::Even);
        assert!((g.value(c(0.0, 2.0)) - c(-4.0, 0.0)).norm() < 1e-15);
        assert!(f.eval(c(0.0, 0.0)).is_err());
    }

    #[test]
    fn eval_matches_naive() {
        let f = LaurentPoly::from_coeffs(
            -4,
            (0..9).map(|i| c((i as f64 * 0.37).sin(), (i as f64 * 1.3).cos())).collect(),
        );
        for z in circle_grid(11, 1.0) {
            let a = f.value(z);
            let b = naive(&f, z);
            assert!((a - b).norm() <= 1e-14 * b.norm().max(1.0));
        }
        let g = LaurentPoly::from_coeffs(-7, vec![c(1.0, 0.5), c(0.0, 0.0), c(2.0, -1.0)]);
        let z = c(0.8, 0.3);
        assert!((g.value(z) - naive(&g, z)).norm() < 1e-12);
        let h = LaurentPoly::from_coeffs(3, vec![c(1.0, 0.5), c(2.0, -1.0)]);
        assert!((h.value(z) - naive(&h, z)).norm() < 1e-14);
    }

    #[test]
    fn interpolate_trivial() {
        let f = LaurentPoly::from_terms(&[(1, c(1.0, 0.0)), (-1, c(-1.0, 0.0))]);
        let s: Vec<_> = circle_grid(5, GRID_RADIUS).into_iter().map(|z| (z, f.value(z))).collect();
        let r = laurent_interpolate(&s, 1, Parity::Odd).unwrap();
        assert!((r.poly.coeff(1) - 1.0).norm() < 1e-12);
        assert!((r.poly.coeff(-1) + 1.0).norm() < 1e-12);
        let zs: Vec<_> = circle_grid(5, GRID_RADIUS).into_iter().map(|z| (z, c(0.0, 0.0))).collect();
        let r = laurent_interpolate(&zs, 2, Parity::None).unwrap();
        assert!(r.poly.is_zero());
        assert_eq!(r.residual, 0.0);
        assert!(laurent_interpolate(&zs[..2], 2, Parity::None).is_err());
    }

    #[test]
    fn restricted_fit_uses_fewer_samples() {
        let f = LaurentPoly::from_terms(&[(2, c(1.0, 2.0)), (0, c(0.5, 0.0)), (-2, c(0.0, -3.0))]);
        let s: Vec<_> = circle_grid(3, GRID_RADIUS).into_iter().map(|z| (z * c(1.0, 0.1), f.value(z * c(1.0, 0.1)))).collect();
        let r = laurent_interpolate(&s, 2, Parity::Even).unwrap();
        assert!(r.poly.coeff_distance(&f) < 1e-12);
    }

    #[test]
    fn roots_trivial() {
        let f = LaurentPoly::from_terms(&[(1, c(1.0, 0.0)), (-1, c(-1.0, 0.0))]);
        let r = poly_roots(&f);
        assert_eq!(r.len(), 2);
        assert!(r.iter().any(|z| (z - 1.0).norm() < 1e-12));
        assert!(r.iter().any(|z| (z + 1.0).norm() < 1e-12));
        // (z-2)(z-3)/z
        let g = LaurentPoly::from_terms(&[(1, c(1.0, 0.0)), (0, c(-5.0, 0.0)), (-1, c(6.0, 0.0))]);
        let r = poly_roots(&g);
        assert!((r[0] - 2.0).norm() < 1e-12 && (r[1] - 3.0).norm() < 1e-12);
        assert!(poly_roots(&LaurentPoly::monomial(3, c(2.0, 0.0))).is_empty());
    }

    #[test]
    fn planted_roots() {
        let planted = [c(0.5, 0.1), c(-1.2, 0.4), c(2.0, -1.0), c(0.3, -0.9), c(-0.7, -0.7), c(1.5, 1.5)];
        let f = monic_from_roots(&planted).scale(c(0.3, -2.0));
        let f = LaurentPoly::from_coeffs(-3, f.polynomial_part());
        let r = poly_roots(&f);
        assert_eq!(r.len(), 6);
        for p in planted {
            assert!(r.iter().any(|z| (z - p).norm() < 1e-8));
        }
    }

    #[test]
    fn root_sets() {
        let q = UnityRoot::new(3, 2).unwrap();
        let rep = root_set_checks(&[c(1.0, 0.0), q.pow(1), q.pow(2)], &q, 1);
        assert!(!rep.p_string_free);
        let rep = root_set_checks(&[c(2.0, 0.0), c(2.0, 0.0)], &q, 1);
        assert!(rep.epsilon_self_adjoint && rep.p_string_free);
        let rep = root_set_checks(&[c(0.0, 2.0), c(0.0, -2.0)], &q, -1);
        assert!(rep.epsilon_self_adjoint);
        let rep = root_set_checks(&[c(0.0, 2.0), c(1.0, 0.0)], &q, 1);
        assert!(!rep.epsilon_self_adjoint);
        let rep = root_set_checks(&[c(0.0, 2.0), c(1.0, 0.0)], &q, -1);
        assert!(!rep.epsilon_self_adjoint);
        let rep = root_set_checks(&[c(0.0, 2.0), c(-1.0, 0.5), c(1.0, 0.5)], &q, -1);
        assert!(rep.epsilon_self_adjoint);
    }

    fn arb_poly(maxdeg: i32) -> impl Strategy<Value = (i32, Vec<C64>)> {
        (0..=maxdeg).prop_flat_map(move |d| {
            (Just(d), prop::collection::vec((-2.0f64..2.0, -2.0f64..2.0), (2 * d + 1) as usize))
        })
        .prop_map(|(d, v)| (d, v.into_iter().map(|(a, b)| c(a, b)).collect()))
    }

    proptest! {
        #[test]
        fn parity_symmetry((d, cs) in arb_poly(6), re in -2.0f64..2.0, im in 0.1f64..2.0) {
            let f = LaurentPoly::from_coeffs(-d, cs);
            let z = c(re, im);
            let even = f.project_parity(Parity::Even);
            let odd = f.project_parity(Parity::Odd);
            let tol = 1e-12 * f.max_abs().max(1.0) * z.norm().max(1.0 / z.norm()).powi(d);
            prop_assert!((even.value(z) - even.value(-z)).norm() <= tol);
            prop_assert!((odd.value(z) + odd.value(-z)).norm() <= tol);
        }

        #[test]
        fn interpolate_roundtrip((d, cs) in arb_poly(6)) {
            let f = LaurentPoly::from_coeffs(-d, cs);
            let m = 2 * d as usize + 3;
            let s: Vec<_> = circle_grid(m, GRID_RADIUS).into_iter().map(|z| (z, f.value(z))).collect();
            let r = laurent_interpolate(&s, d as usize, Parity::None).unwrap();
            prop_assert!(r.poly.coeff_distance(&f) <= 1e-10 * f.max_abs().max(1e-300));
        }

        #[test]
        fn roots_reconstruct(cs in prop::collection::vec((-2.0f64..2.0, -2.0f64..2.0), 2..10)) {
            let mut cs: Vec<C64> = cs.into_iter().map(|(a, b)| c(a, b)).collect();
            if cs[0].norm() < 0.1 { cs[0] = c(1.0, 0.0); }
            let n = cs.len();
            if cs[n - 1].norm() < 0.1 { cs[n - 1] = c(1.0, 0.0); }
            let f = LaurentPoly::from_coeffs(-2, cs);
            let r = poly_roots(&f);
            let g = LaurentPoly::from_coeffs(-2, monic_from_roots(&r).polynomial_part()).scale(f.coeff(f.hi()));
            prop_assert!(g.coeff_distance(&f) <= 1e-8 * f.max_abs());
        }
    }
}
