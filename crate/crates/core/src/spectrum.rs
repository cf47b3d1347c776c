//! Transfer-matrix spectrum: joint diagonalization with Theta, the
//! functional determinant certificate, Baxter Q from the nullspace and from
//! cofactors, Bethe equations, SOV wavefunctions and the Q-operator.

use std::collections::BTreeMap;

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::algebra::{
    circle_grid, laurent_interpolate, poly_roots, root_set_checks, AlgebraError, LaurentPoly, Parity, RootSetReport,
    UnityRoot, GRID_RADIUS,
};
use crate::averages::average_monodromy;
use crate::linalg::{det, eigen, null_vector, one, proportionality, zero, Mat, Vector};
use crate::model::{qdet_scalar, sadj_baxter_coeffs, transfer, ModelError, ModelParams};
use crate::sov::{SovBasis, SovCoefficients};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpectrumError {
    #[error("degenerate spectrum: {0}")]
    Degenerate(String),
    #[error("no Baxter solution: {0}")]
    NoSolution(String),
    #[error("incomplete line set: {got} of {expected}")]
    Incomplete { got: usize, expected: usize },
    #[error(transparent)]
    Algebra(#[from] AlgebraError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

pub type Result<T> = std::result::Result<T, SpectrumError>;

/// Relative separation for eigenvalues of tau_2(lambda*) inside a sector.
pub const SIMPLE_GAP: f64 = 1e-8;
/// Pairing tolerance for root stripping.
pub const STRIP_REL: f64 = 1e-5;
/// Required ratio of second-smallest to smallest singular value.
pub const NULL_GAP: f64 = 1e3;

/// One simultaneous eigenstate of (tau_2, Theta).
#[derive(Clone, Debug)]
pub struct SpectralLine {
    pub k: usize,
    pub t: LaurentPoly,
    pub eigvec: Vector,
    /// Dual covector, dual * eigvec = 1.
    pub dual: Vector,
    pub q: Option<LaurentPoly>,
    pub a_t: Option<usize>,
    pub b_t: Option<usize>,
    pub bethe_roots: Vec<C64>,
    pub residuals: BTreeMap<String, f64>,
}

impl SpectralLine {
    pub fn residual(&self, name: &str) -> Option<f64> {
        self.residuals.get(name).copied()
    }
}

const LAMBDA_STAR: [(f64, f64); 5] = [(0.93, 0.0), (0.71, 0.38), (1.21, -0.44), (0.58, 0.0), (-0.87, 0.63)];

/// Eigenlines of tau_2 inside each Theta sector, with t(lambda) from
/// Rayleigh quotients on a circle and Laurent interpolation.
pub fn joint_diagonalize(params: &ModelParams) -> Result<Vec<SpectralLine>> {
    let mut last = String::new();
    for &(re, im) in LAMBDA_STAR.iter() {
        match diagonalize_at(params, C64::new(re, im)) {
            Ok(lines) => return Ok(lines),
            Err(e) => last = e.to_string(),
        }
    }
    Err(SpectrumError::Degenerate(format!("no generic lambda*: {last}")))
}

fn diagonalize_at(params: &ModelParams, lstar: C64) -> Result<Vec<SpectralLine>> {
    let n = params.n();
    let space = params.space();
    let tau_star = transfer(params, lstar)?;
    let grid = circle_grid(2 * n + 1, GRID_RADIUS);
    let taus: Vec<Mat> = grid.iter().map(|&l| transfer(params, l)).collect::<std::result::Result<_, _>>()?;
    let asym = params.asymptotics();
    let root = params.root();
    let mut lines = Vec::with_capacity(space.dim);
    for k in 0..params.p() {
        let v = space.sector_basis(k);
        let restricted = v.adjoint() * &tau_star * &v;
        let eig = eigen(&restricted).ok_or_else(|| SpectrumError::Degenerate("eigen failed".into()))?;
        let scale = restricted.norm().max(f64::MIN_POSITIVE);
        for i in 0..eig.values.len() {
            for j in 0..i {
                if (eig.values[i] - eig.values[j]).norm() < SIMPLE_GAP * scale {
                    return Err(SpectrumError::Degenerate(format!("sector {k} at lambda* = {lstar}")));
                }
            }
        }
        let mut order: Vec<usize> = (0..eig.values.len()).collect();
        order.sort_by(|&a, &b| {
            let (x, y) = (eig.values[a], eig.values[b]);
            x.re.partial_cmp(&y.re).unwrap().then(x.im.partial_cmp(&y.im).unwrap())
        });
        for i in order {
            let mut right: Vector = &v * eig.right.column(i);
            let nr = right.norm();
            right.unscale_mut(nr);
            let mut dual: Vector = (eig.left.row(i) * v.adjoint()).transpose();
            let norm = (dual.transpose() * &right)[(0, 0)];
            dual.unscale_mut(1.0);
            dual /= norm;
            let samples: Vec<(C64, C64)> = grid
                .iter()
                .zip(&taus)
                .map(|(&l, tau)| (l, (dual.transpose() * (tau * &right))[(0, 0)]))
                .collect();
            let full = laurent_interpolate(&samples, n, Parity::None)?;
            let t = full.poly.project_parity(Parity::of(n));
            let mut residuals = BTreeMap::new();
            residuals.insert("parity_leak".into(), full.poly.parity_leak(Parity::of(n)) / full.poly.max_abs());
            residuals.insert("interpolation".into(), full.residual / full.scale);
            let e = (tau_star.clone() * &right - &right * eig.values[i]).norm() / scale;
            residuals.insert("eigen".into(), e);
            let ni = n as i32;
            let kk = k as i64;
            let inf = root.pow(kk) * asym.a_plus + root.pow(-kk) * asym.d_plus;
            let zer = root.pow(-kk) * asym.a_minus + root.pow(kk) * asym.d_minus;
            let dev = (t.coeff(ni) - inf).norm() / inf.norm().max(f64::MIN_POSITIVE);
            let dev0 = (t.coeff(-ni) - zer).norm() / zer.norm().max(f64::MIN_POSITIVE);
            residuals.insert("asymptotics".into(), dev.max(dev0));
            lines.push(SpectralLine {
                k,
                t,
                eigvec: right,
                dual,
                q: None,
                a_t: None,
                b_t: None,
                bethe_roots: Vec::new(),
                residuals,
            });
        }
    }
    Ok(lines)
}

/// Data of the p x p matrix D(lambda): t, the coefficient pair and the
/// average trace A + D in Lambda.
#[derive(Clone, Debug)]
pub struct FunctionalMatrixSpec {
    pub t: LaurentPoly,
    pub coeff_a: LaurentPoly,
    pub coeff_d: LaurentPoly,
    pub average_trace: LaurentPoly,
    pub root: UnityRoot,
}

impl FunctionalMatrixSpec {
    pub fn new(params: &ModelParams, t: LaurentPoly, coeff_a: LaurentPoly, coeff_d: LaurentPoly) -> Self {
        let avg = average_monodromy(params);
        FunctionalMatrixSpec { t, coeff_a, coeff_d, average_trace: avg.trace(), root: params.root().clone() }
    }

    /// With the gauge pair built from the quantum determinant factors.
    pub fn gauge(params: &ModelParams, t: LaurentPoly) -> Self {
        let (a, d) = crate::model::gauge_coeffs(params);
        Self::new(params, t, a, d)
    }

    /// With the self-adjoint subvariety pair.
    pub fn subvariety(params: &ModelParams, t: LaurentPoly, eps: i32) -> Self {
        let (a, d) = sadj_baxter_coeffs(params, eps);
        Self::new(params, t, a, d)
    }

    pub fn p(&self) -> usize {
        self.root.p
    }

    /// a(l) d(l/q).
    pub fn qdet(&self, lambda: C64) -> C64 {
        self.coeff_a.value(lambda) * self.coeff_d.value(lambda / self.root.q)
    }

    /// Max relative deviation of a(l) d(l/q) from det_q M(l) at 5 points.
    pub fn pairing_residual(&self, params: &ModelParams) -> f64 {
        [(0.9, 0.3), (-0.4, 1.1), (1.3, -0.2), (0.2, -0.8), (-1.05, -0.45)]
            .iter()
            .map(|&(re, im)| {
                let l = C64::new(re, im);
                let qd = qdet_scalar(params, l);
                (self.qdet(l) - qd).norm() / qd.norm()
            })
            .fold(0.0, f64::max)
    }
}

/// det of the tridiagonal block with diagonal t(q^i l), i in lo..=hi, and
/// off-diagonal products det_q(q^i l).
fn tridiagonal(spec: &FunctionalMatrixSpec, lambda: C64, lo: usize, hi: usize) -> C64 {
    let r = &spec.root;
    let mut f_prev = one();
    let mut f = spec.t.value(r.pow(lo as i64) * lambda);
    for i in lo + 1..=hi {
        let mu = r.pow(i as i64) * lambda;
        let next = spec.t.value(mu) * f - spec.qdet(mu) * f_prev;
        f_prev = f;
        f = next;
    }
    f
}

/// det_p D(lambda) by the four-term expansion with tridiagonal minors.
pub fn det_expansion(spec: &FunctionalMatrixSpec, lambda: C64) -> C64 {
    let p = spec.p();
    let big = lambda.powi(p as i32);
    -spec.average_trace.value(big) - spec.qdet(lambda) * tridiagonal(spec, lambda, 1, p - 2)
        - spec.qdet(spec.root.q * lambda) * tridiagonal(spec, lambda, 2, p - 1)
        + spec.t.value(lambda) * tridiagonal(spec, lambda, 1, p - 1)
}

/// The cyclic matrix with row i: -abar(q^i l) at i-1, t(q^i l) at i,
/// -dbar(q^i l) at i+1.
pub fn d_matrix(t: &[C64], abar: &[C64], dbar: &[C64]) -> Mat {
    let p = t.len();
    let mut m = Mat::zeros(p, p);
    for i in 0..p {
        m[(i, i)] = t[i];
        m[(i, (i + 1) % p)] -= dbar[i];
        m[(i, (i + p - 1) % p)] -= abar[i];
    }
    m
}

/// Dense determinant with the orbit rescaled so that prod abar and prod dbar
/// are the two roots of x^2 - (A + D) x + prod det_q.
pub fn det_dense(spec: &FunctionalMatrixSpec, lambda: C64) -> C64 {
    let p = spec.p();
    let r = &spec.root;
    let mus: Vec<C64> = (0..p).map(|i| r.pow(i as i64) * lambda).collect();
    let prod_a = mus.iter().fold(one(), |acc, &m| acc * spec.coeff_a.value(m));
    let prod_qd = mus.iter().fold(one(), |acc, &m| acc * spec.qdet(m));
    let tr = spec.average_trace.value(lambda.powi(p as i32));
    let omega = tr / 2.0 + (tr * tr / 4.0 - prod_qd).sqrt();
    let c = (omega / prod_a).powf(1.0 / p as f64);
    let t: Vec<C64> = mus.iter().map(|&m| spec.t.value(m)).collect();
    let abar: Vec<C64> = mus.iter().map(|&m| c * spec.coeff_a.value(m)).collect();
    let dbar: Vec<C64> = mus.iter().map(|&m| spec.coeff_d.value(m) / c).collect();
    det(&d_matrix(&t, &abar, &dbar))
}

#[derive(Clone, Debug)]
pub struct DetFunctional {
    /// det_p D as a Laurent polynomial in Lambda.
    pub poly: LaurentPoly,
    /// Coefficient scale of A + D.
    pub scale: f64,
    pub fit_residual: f64,
}

impl DetFunctional {
    /// Largest coefficient relative to the A + D scale.
    pub fn relative(&self) -> f64 {
        self.poly.max_abs() / self.scale
    }

    /// Leading coefficients at Lambda^{+-N} relative to the scale.
    pub fn asymptotic(&self, n: usize) -> f64 {
        let ni = n as i32;
        self.poly.coeff(ni).norm().max(self.poly.coeff(-ni).norm()) / self.scale
    }
}

/// Interpolated det_p D(Lambda), degree N with the parity of N.
pub fn det_functional(spec: &FunctionalMatrixSpec) -> Result<DetFunctional> {
    let p = spec.p();
    let n = spec.t.degree();
    let m = 2 * n + 3;
    let lambdas = circle_grid(m * p, GRID_RADIUS);
    let samples: Vec<(C64, C64)> =
        lambdas.iter().take(m).map(|&l| (l.powi(p as i32), det_expansion(spec, l))).collect();
    let fit = laurent_interpolate(&samples, n, Parity::of(n))?;
    Ok(DetFunctional { poly: fit.poly, scale: spec.average_trace.max_abs(), fit_residual: fit.residual / fit.scale.max(f64::MIN_POSITIVE) })
}

/// Baxter residual max |tQ - aQ(l/q) - dQ(ql)| / (|tQ| + |aQ(l/q)| + |dQ(ql)|).
pub fn baxter_residual(t: &LaurentPoly, a: &LaurentPoly, d: &LaurentPoly, q: &LaurentPoly, root: &UnityRoot, pts: &[C64]) -> f64 {
    pts.iter()
        .map(|&l| {
            let x = t.value(l) * q.value(l);
            let y = a.value(l) * q.value(l / root.q);
            let z = d.value(l) * q.value(l * root.q);
            (x - y - z).norm() / (x.norm() + y.norm() + z.norm())
        })
        .fold(0.0, f64::max)
}

fn baxter_grid() -> Vec<C64> {
    (0..12).map(|j| C64::from_polar(0.83 + 0.03 * j as f64, 2.0 * std::f64::consts::PI * (j as f64 + 0.29) / 12.0)).collect()
}

#[derive(Clone, Debug)]
pub struct QSolution {
    /// Q as a polynomial, normalized so that Q = l^{a_t} prod (l_h - l).
    pub q: LaurentPoly,
    pub a_t: usize,
    pub b_t: usize,
    /// Smallest over largest singular value.
    pub smallest: f64,
    /// Second-smallest over smallest singular value.
    pub gap: f64,
    pub baxter: f64,
}

fn chain_len(t: &LaurentPoly, a: &LaurentPoly) -> usize {
    t.degree().max(a.degree())
}

/// Q = l^{lo} prod (l_h - l) normalization and the exponents a_t, b_t.
fn normalize_q(raw: &LaurentPoly, bound: usize) -> (LaurentPoly, usize, usize) {
    let q = raw.pruned(1e-10);
    let top = q.coeff(q.hi());
    let ndeg = q.hi() - q.lo();
    let sign = if ndeg % 2 == 0 { 1.0 } else { -1.0 };
    let q = q.scale(C64::new(sign, 0.0) / top);
    let a_t = q.lo() as usize;
    let b_t = bound - q.hi() as usize;
    (q, a_t, b_t)
}

/// Polynomial Q of degree <= 2lN solving t Q = a Q(l/q) + d Q(ql), as the
/// smallest right singular vector of the sampled residual map.
pub fn q_from_nullspace(t: &LaurentPoly, a: &LaurentPoly, d: &LaurentPoly, root: &UnityRoot) -> Result<QSolution> {
    let n = chain_len(t, a);
    let bound = root.l * 2 * n;
    let cols = bound + 1;
    let s = 3 * cols;
    let mut m = Mat::zeros(s, cols);
    for i in 0..s {
        let l = C64::from_polar(1.0, 2.0 * std::f64::consts::PI * (i as f64 + 0.37) / s as f64);
        let (tv, av, dv) = (t.value(l), a.value(l), d.value(l));
        for j in 0..cols {
            let e = j as i32;
            m[(i, j)] = tv * l.powi(e) - av * (l / root.q).powi(e) - dv * (l * root.q).powi(e);
        }
        let rn = m.row(i).norm();
        if rn > 0.0 {
            m.row_mut(i).unscale_mut(rn);
        }
    }
    let (v, sv) = null_vector(&m);
    let smallest = sv[cols - 1] / sv[0];
    let gap = if sv[cols - 1] > 0.0 { sv[cols - 2] / sv[cols - 1] } else { f64::INFINITY };
    if !(smallest < 1e-7) {
        return Err(SpectrumError::NoSolution(format!("smallest singular ratio {smallest:.2e}")));
    }
    if !(gap >= NULL_GAP) {
        return Err(SpectrumError::Degenerate(format!("nullspace gap {gap:.2e}")));
    }
    let raw = LaurentPoly::from_coeffs(0, v.iter().copied().collect());
    let (q, a_t, b_t) = normalize_q(&raw, bound);
    let baxter = baxter_residual(t, a, d, &q, root, &baxter_grid());
    Ok(QSolution { q, a_t, b_t, smallest, gap, baxter })
}

/// Multiplies Q by the phase making it eps-real: Q(l)^* = Q(eps l^*).
pub fn epsilon_real(q: &LaurentPoly, eps: i32) -> LaurentPoly {
    let (e0, c0) = q.terms().fold((0, zero()), |(be, bc), (e, c)| if c.norm() > bc.norm() { (e, c) } else { (be, bc) });
    let sign = if eps == -1 && e0.rem_euclid(2) == 1 { -1.0 } else { 1.0 };
    let ph = (c0.conj() / (c0 * sign)).sqrt();
    q.scale(ph / ph.norm())
}

/// max_j |Q(l_j)^* - Q(eps l_j^*)| / max |Q|.
pub fn epsilon_real_residual(q: &LaurentPoly, eps: i32) -> f64 {
    let pts = baxter_grid();
    let scale = pts.iter().fold(0.0f64, |m, &l| m.max(q.value(l).norm()));
    pts.iter().map(|&l| (q.value(l).conj() - q.value(l.conj() * eps as f64)).norm()).fold(0.0, f64::max) / scale
}

/// The matrix D~(l) with the pair (a, d) in place of (abar, dbar).
pub fn d_tilde(t: &LaurentPoly, a: &LaurentPoly, d: &LaurentPoly, root: &UnityRoot, lambda: C64) -> Mat {
    let p = root.p;
    let mus: Vec<C64> = (0..p).map(|i| root.pow(i as i64) * lambda).collect();
    let tv: Vec<C64> = mus.iter().map(|&m| t.value(m)).collect();
    let av: Vec<C64> = mus.iter().map(|&m| a.value(m)).collect();
    let dv: Vec<C64> = mus.iter().map(|&m| d.value(m)).collect();
    d_matrix(&tv, &av, &dv)
}

fn minor(m: &Mat, rows: &[usize], cols: &[usize]) -> Mat {
    let keep_r: Vec<usize> = (0..m.nrows()).filter(|i| !rows.contains(i)).collect();
    let keep_c: Vec<usize> = (0..m.ncols()).filter(|j| !cols.contains(j)).collect();
    Mat::from_fn(keep_r.len(), keep_c.len(), |i, j| m[(keep_r[i], keep_c[j])])
}

/// (-1)^{i+j} det of D~ without row i and column j (0-based).
pub fn cofactor(m: &Mat, i: usize, j: usize) -> C64 {
    let s = if (i + j).is_multiple_of(2) { 1.0 } else { -1.0 };
    det(&minor(m, &[i], &[j])) * s
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct CofactorReport {
    pub shift_identity: f64,
    pub c11_odd_leak: f64,
    pub c21_reflection: f64,
    pub c1p_reflection: f64,
    pub product_identity: f64,
    pub baxter_cofactor: f64,
    pub c1p_expansion: f64,
    pub c12_expansion: f64,
    /// Only when eps is supplied.
    pub conjugation: Option<f64>,
    /// The common zero sets of C11 with C12 and with C1p agree.
    pub zero_sets_agree: bool,
    /// a_t from the leading-coefficient phase agrees with the Baxter residual.
    pub phase_consistent: bool,
    pub fell_back: bool,
    /// max coefficient deviation from the nullspace Q after scale alignment.
    pub nullspace_agreement: f64,
}

#[derive(Clone, Debug)]
pub struct CofactorSolution {
    pub q: LaurentPoly,
    pub a_t: usize,
    pub report: CofactorReport,
}

fn rel(a: C64, b: C64) -> f64 {
    (a - b).norm() / a.norm().max(b.norm()).max(f64::MIN_POSITIVE)
}

/// Strip from `src` the roots it shares with `other` (one-to-one, relative
/// distance below STRIP_REL). None when a root has two candidates.
fn strip_common(src: &[C64], other: &[C64]) -> Option<(Vec<C64>, Vec<C64>)> {
    let mut used = vec![false; other.len()];
    let mut kept = Vec::new();
    let mut common = Vec::new();
    for &r in src {
        let close: Vec<usize> =
            (0..other.len()).filter(|&j| !used[j] && (r - other[j]).norm() < STRIP_REL * r.norm().max(1e-300)).collect();
        match close.len() {
            0 => kept.push(r),
            1 => {
                used[close[0]] = true;
                common.push(r);
            }
            _ => return None,
        }
    }
    Some((kept, common))
}

fn same_set(a: &[C64], b: &[C64]) -> bool {
    a.len() == b.len() && strip_common(a, b).is_some_and(|(kept, _)| kept.is_empty())
}

/// Q from the cofactor C11 after removing the zeros it shares with C12,
/// together with the cofactor identities.
pub fn q_from_cofactor(
    t: &LaurentPoly,
    a: &LaurentPoly,
    d: &LaurentPoly,
    root: &UnityRoot,
    eps: Option<i32>,
) -> Result<CofactorSolution> {
    let p = root.p;
    let n = chain_len(t, a);
    let bound = 2 * root.l * n;
    let qn = root.pow(n as i64);
    let mut rep = CofactorReport::default();

    // identities at scattered points
    let probes = [C64::new(0.77, 0.31), C64::new(-0.52, 0.94), C64::new(1.18, -0.37)];
    for &l in &probes {
        let dm = d_tilde(t, a, d, root, l);
        for (h, k) in [(0usize, 0usize), (0, 1), (1, 0), (0, p - 1), (1, 2 % p)] {
            for i in 1..p {
                let lhs = cofactor(&dm, (h + i) % p, (k + i) % p);
                let rhs = cofactor(&d_tilde(t, a, d, root, l * root.pow(i as i64)), h, k);
                rep.shift_identity = rep.shift_identity.max(rel(lhs, rhs));
            }
        }
        let dneg = d_tilde(t, a, d, root, -l);
        let c11 = cofactor(&dm, 0, 0);
        let c12 = cofactor(&dm, 0, 1);
        let c1p = cofactor(&dm, 0, p - 1);
        let c12_neg = cofactor(&dneg, 0, 1);
        rep.c21_reflection = rep.c21_reflection.max(rel(cofactor(&dm, 1, 0), qn * c12_neg));
        let c12_nq = cofactor(&d_tilde(t, a, d, root, -l / root.q), 0, 1);
        rep.c1p_reflection = rep.c1p_reflection.max(rel(c1p, qn * c12_nq));
        let c11_q = cofactor(&d_tilde(t, a, d, root, l * root.q), 0, 0);
        rep.product_identity = rep.product_identity.max(rel(c11_q * c11, qn * c12 * c12_neg));
        rep.baxter_cofactor = rep.baxter_cofactor.max(rel(t.value(l) * c11, a.value(l) * c1p + d.value(l) * c12));
        let tri = |x: C64| det(&minor(&d_tilde(t, a, d, root, x), &[0, 1], &[0, 1]));
        let prod_a = (1..p).fold(one(), |acc, h| acc * a.value(l * root.pow(h as i64)));
        let prod_d = (1..p).fold(one(), |acc, h| acc * d.value(l * root.pow(h as i64)));
        rep.c1p_expansion = rep.c1p_expansion.max(rel(c1p, prod_a + d.value(l / root.q) * tri(l / root.q)));
        rep.c12_expansion = rep.c12_expansion.max(rel(c12, prod_d + a.value(l * root.q) * tri(l)));
        if let Some(e) = eps {
            let dc = d_tilde(t, a, d, root, l.conj() * e as f64);
            let r1 = rel(c11.conj(), cofactor(&dc, 0, 0));
            let r2 = rel(c12.conj(), cofactor(&dc, 0, p - 1));
            rep.conjugation = Some(rep.conjugation.unwrap_or(0.0).max(r1.max(r2)));
        }
    }

    // interpolate C11, C12, C1p
    let m = 2 * bound + 5;
    let grid: Vec<C64> = (0..m).map(|j| C64::from_polar(1.0, 2.0 * std::f64::consts::PI * (j as f64 + 0.21) / m as f64)).collect();
    let mut s11 = Vec::new();
    let mut s12 = Vec::new();
    let mut s1p = Vec::new();
    for &l in &grid {
        let dm = d_tilde(t, a, d, root, l);
        s11.push((l, cofactor(&dm, 0, 0)));
        s12.push((l, cofactor(&dm, 0, 1)));
        s1p.push((l, cofactor(&dm, 0, p - 1)));
    }
    let c11 = laurent_interpolate(&s11, bound, Parity::None)?.poly;
    let c12 = laurent_interpolate(&s12, bound, Parity::None)?.poly.pruned(1e-11);
    let c1p = laurent_interpolate(&s1p, bound, Parity::None)?.poly.pruned(1e-11);
    rep.c11_odd_leak = c11.parity_leak(Parity::Even) / c11.max_abs();
    let c11 = c11.project_parity(Parity::Even).pruned(1e-11);

    let r11 = poly_roots(&c11);
    let r12 = poly_roots(&c12);
    let r1p = poly_roots(&c1p);
    let nullspace = q_from_nullspace(t, a, d, root);

    let stripped = strip_common(&r11, &r12).zip(strip_common(&r11, &r1p));
    let fallback = |mut rep: CofactorReport| -> Result<CofactorSolution> {
        let ns = nullspace.clone()?;
        rep.fell_back = true;
        Ok(CofactorSolution { q: ns.q, a_t: ns.a_t, report: rep })
    };
    let Some(((kept, common12), (_, common1p))) = stripped else {
        return fallback(rep);
    };
    rep.zero_sets_agree = same_set(&common12, &common1p);

    // C = c l^m prod (l_h - l): c = lowest coefficient / prod l_h
    let lead = |f: &LaurentPoly, roots: &[C64]| f.coeff(f.lo()) / roots.iter().fold(one(), |acc, &r| acc * r);
    let phi = lead(&c11, &r11) / lead(&c12, &r12);
    let n11 = kept.len();
    let bar = kept.iter().fold(LaurentPoly::constant(one()), |acc, &r| &acc * &LaurentPoly::from_coeffs(0, vec![r, -one()]));
    let target = root.pow(n11 as i64) * phi; // = q^{-a_t}
    let from_phase = (0..p).min_by(|&x, &y| {
        (target - root.pow(-(x as i64))).norm().partial_cmp(&(target - root.pow(-(y as i64))).norm()).unwrap()
    });
    let pts = baxter_grid();
    let with = |at: usize| &bar * &LaurentPoly::monomial(at as i32, one());
    let best = (0..p)
        .min_by(|&x, &y| {
            baxter_residual(t, a, d, &with(x), root, &pts).partial_cmp(&baxter_residual(t, a, d, &with(y), root, &pts)).unwrap()
        })
        .unwrap();
    let from_phase = from_phase.unwrap();
    rep.phase_consistent = from_phase == best && (target - root.pow(-(from_phase as i64))).norm() < 1e-6;
    let q = with(from_phase);
    if baxter_residual(t, a, d, &q, root, &pts) > 1e-6 {
        return fallback(rep);
    }
    let (q, a_t, _) = normalize_q(&q, bound);
    if let Ok(ns) = &nullspace {
        let lo = q.lo().min(ns.q.lo());
        let hi = q.hi().max(ns.q.hi());
        let x: Vec<C64> = (lo..=hi).map(|e| q.coeff(e)).collect();
        let y: Vec<C64> = (lo..=hi).map(|e| ns.q.coeff(e)).collect();
        let (_, c) = proportionality(&x, &y);
        let scale = x.iter().fold(0.0f64, |m, v| m.max(v.norm()));
        rep.nullspace_agreement = x.iter().zip(&y).map(|(u, v)| (u - c * v).norm()).fold(0.0, f64::max) / scale;
    } else {
        rep.nullspace_agreement = f64::INFINITY;
    }
    Ok(CofactorSolution { q, a_t, report: rep })
}

#[derive(Clone, Debug)]
pub struct BetheReport {
    pub roots: Vec<C64>,
    pub max_residual: f64,
    pub pole_collision: bool,
    pub root_set: RootSetReport,
    /// a_t = +-k and b_t = +-k mod p.
    pub congruence: bool,
    /// t rebuilt from Q against the given t, coefficientwise.
    pub reconstruction: f64,
}

/// Bethe equations a(l_c)/d(l_c) = -q^{2 a_t} prod (q l_c - l_h)/(l_c/q - l_h),
/// congruences and the t(l) round trip.
pub fn bethe_check(
    q: &LaurentPoly,
    t: &LaurentPoly,
    a: &LaurentPoly,
    d: &LaurentPoly,
    k: usize,
    root: &UnityRoot,
    eps: i32,
) -> Result<BetheReport> {
    let p = root.p as i64;
    let n = chain_len(t, a);
    let bound = 2 * root.l * n;
    let roots = poly_roots(q);
    let a_t = q.lo() as usize;
    let b_t = bound as i64 - q.hi() as i64;
    let mut max_residual = 0.0f64;
    let mut pole_collision = false;
    for &lc in &roots {
        let dv = d.value(lc);
        let av = a.value(lc);
        if dv.norm() < 1e-12 * av.norm().max(1.0) {
            pole_collision = true;
            continue;
        }
        let prod = roots.iter().fold(one(), |acc, &lh| acc * (root.q * lc - lh) / (lc / root.q - lh));
        let lhs = av / dv;
        let rhs = -root.pow(2 * a_t as i64) * prod;
        max_residual = max_residual.max((lhs - rhs).norm() / lhs.norm().max(rhs.norm()));
    }
    let kk = k as i64;
    let cong = |x: i64| (x - kk).rem_euclid(p) == 0 || (x + kk).rem_euclid(p) == 0;
    let congruence = cong(a_t as i64) && cong(b_t);
    let grid = circle_grid(2 * n + 3, GRID_RADIUS);
    let samples: Vec<(C64, C64)> = grid
        .iter()
        .map(|&l| (l, (a.value(l) * q.value(l / root.q) + d.value(l) * q.value(l * root.q)) / q.value(l)))
        .collect();
    let rebuilt = laurent_interpolate(&samples, n, Parity::None)?.poly;
    let reconstruction = rebuilt.coeff_distance(t) / t.max_abs();
    Ok(BetheReport {
        root_set: root_set_checks(&roots, root, eps),
        roots,
        max_residual,
        pole_collision,
        congruence,
        reconstruction,
    })
}

/// Q_t on the q-orbit of eta_r^(0): null vector of D with the SOV coefficients.
pub fn orbit_q(line: &SpectralLine, grid_eta0: C64, coeffs: &SovCoefficients, r: usize, root: &UnityRoot) -> (Vec<C64>, f64) {
    let p = root.p;
    let mus: Vec<C64> = (0..p).map(|j| root.pow(j as i64) * grid_eta0).collect();
    let t: Vec<C64> = mus.iter().map(|&m| line.t.value(m)).collect();
    let a: Vec<C64> = (0..p).map(|j| coeffs.a_at(r, j as i64)).collect();
    let d: Vec<C64> = (0..p).map(|j| coeffs.d_at(r, j as i64)).collect();
    let m = d_matrix(&t, &a, &d);
    let (v, sv) = null_vector(&m);
    (v.iter().copied().collect(), sv[p - 1] / sv[0])
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct WavefunctionReport {
    /// Deviation of <eta|t> from eta_N^{-k} prod Q_t(eta_r), one global scalar.
    pub factorization: f64,
    /// The separated Baxter system on the SOV grid.
    pub sov_baxter: f64,
    /// Worst smallest-singular ratio of the orbit matrices.
    pub orbit_null: f64,
}

/// Compares <eta|t> in the gauge-fixed basis with the factorized form.
pub fn wavefunction_check(
    params: &ModelParams,
    line: &SpectralLine,
    basis: &SovBasis,
    coeffs: &SovCoefficients,
) -> Result<WavefunctionReport> {
    let root = params.root();
    let p = root.p;
    let n = params.n();
    let grid = &basis.grid;
    let psi: Vec<C64> = (0..basis.dim()).map(|i| (basis.rows.row(i) * &line.eigvec)[(0, 0)]).collect();
    let scale = psi.iter().fold(0.0f64, |m, x| m.max(x.norm()));
    if scale == 0.0 {
        return Err(SpectrumError::Degenerate("zero wavefunction".into()));
    }
    let mut rep = WavefunctionReport::default();
    let orbits: Vec<(Vec<C64>, f64)> = (0..n - 1).map(|r| orbit_q(line, grid.eta0[r], coeffs, r, root)).collect();
    rep.orbit_null = orbits.iter().map(|o| o.1).fold(0.0, f64::max);
    let pred: Vec<C64> = (0..basis.dim())
        .map(|i| {
            let lab = grid.label(p, i);
            let en = grid.eta(root, n - 1, lab[n - 1] as i64);
            (0..n - 1).fold(en.powi(-(line.k as i32)), |acc, r| acc * orbits[r].0[lab[r]])
        })
        .collect();
    rep.factorization = proportionality(&psi, &pred).0;
    for i in 0..basis.dim() {
        let lab = grid.label(p, i);
        for r in 0..n - 1 {
            let kr = lab[r] as i64;
            let er = grid.eta(root, r, kr);
            let down = crate::sov::shift_label(i, r, -1, p, n);
            let up = crate::sov::shift_label(i, r, 1, p, n);
            let lhs = line.t.value(er) * psi[i];
            let rhs = coeffs.a_at(r, kr) * psi[down] + coeffs.d_at(r, kr) * psi[up];
            rep.sov_baxter = rep.sov_baxter.max((lhs - rhs).norm() / scale / (line.t.value(er).norm() + coeffs.a_at(r, kr).norm() + coeffs.d_at(r, kr).norm()));
        }
    }
    Ok(rep)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LineCertificate {
    pub k: usize,
    pub det_residual: f64,
    pub asymptotic: f64,
    pub wavefunction: Option<WavefunctionReport>,
    pub pass: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SpectrumCertificate {
    pub lines: Vec<LineCertificate>,
    pub distinct: bool,
    pub complete: bool,
}

impl SpectrumCertificate {
    pub fn all_pass(&self) -> bool {
        self.distinct && self.complete && self.lines.iter().all(|l| l.pass)
    }
}

pub const DET_TOL: f64 = 1e-6;
pub const WAVE_TOL: f64 = 1e-7;

/// Functional-equation and, when a gauge-fixed basis is supplied, SOV checks
/// for every line.
pub fn certify_spectrum(
    params: &ModelParams,
    lines: &[SpectralLine],
    sov: Option<(&SovBasis, &SovCoefficients)>,
) -> Result<SpectrumCertificate> {
    let n = params.n();
    let mut out = Vec::with_capacity(lines.len());
    for line in lines {
        let spec = FunctionalMatrixSpec::gauge(params, line.t.clone());
        let det = det_functional(&spec)?;
        let wf = match sov {
            Some((b, c)) if n > 1 => Some(wavefunction_check(params, line, b, c)?),
            _ => None,
        };
        let pass = det.relative() < DET_TOL
            && wf.as_ref().is_none_or(|w| w.factorization < WAVE_TOL && w.sov_baxter < WAVE_TOL);
        out.push(LineCertificate { k: line.k, det_residual: det.relative(), asymptotic: det.asymptotic(n), wavefunction: wf, pass });
    }
    let mut distinct = true;
    for i in 0..lines.len() {
        for j in 0..i {
            if lines[i].k == lines[j].k && lines[i].t.coeff_distance(&lines[j].t) < 1e-8 * lines[i].t.max_abs() {
                distinct = false;
            }
        }
    }
    Ok(SpectrumCertificate { lines: out, distinct, complete: lines.len() == params.p().pow(n as u32) })
}

/// Fills Q, a_t, b_t, Bethe roots and the associated residuals for every
/// line of a self-adjoint subvariety run.
pub fn attach_baxter(params: &ModelParams, lines: &mut [SpectralLine], eps: i32) -> Result<()> {
    let (a, d) = sadj_baxter_coeffs(params, eps);
    let root = params.root();
    for line in lines.iter_mut() {
        let ns = q_from_nullspace(&line.t, &a, &d, root)?;
        let cof = q_from_cofactor(&line.t, &a, &d, root, Some(eps))?;
        let bethe = bethe_check(&ns.q, &line.t, &a, &d, line.k, root, eps)?;
        let r = &mut line.residuals;
        r.insert("q_smallest_sv".into(), ns.smallest);
        r.insert("q_gap_inverse".into(), 1.0 / ns.gap);
        r.insert("baxter".into(), ns.baxter);
        r.insert("cofactor_agreement".into(), cof.report.nullspace_agreement);
        r.insert("cofactor_product".into(), cof.report.product_identity);
        r.insert("bethe".into(), bethe.max_residual);
        r.insert("t_reconstruction".into(), bethe.reconstruction);
        r.insert("congruence".into(), if bethe.congruence { 0.0 } else { 1.0 });
        r.insert("p_string_free".into(), if bethe.root_set.p_string_free { 0.0 } else { 1.0 });
        r.insert("eps_self_adjoint".into(), if bethe.root_set.epsilon_self_adjoint { 0.0 } else { 1.0 });
        line.q = Some(epsilon_real(&ns.q, eps));
        line.a_t = Some(ns.a_t);
        line.b_t = Some(ns.b_t);
        line.bethe_roots = bethe.roots;
    }
    Ok(())
}

/// Q(l) = sum_t Q_t(l) |t><t~|.
#[derive(Clone, Debug)]
pub struct QOperator {
    pub q: Vec<LaurentPoly>,
    pub right: Mat,
    pub left: Mat,
}

impl QOperator {
    pub fn at(&self, lambda: C64) -> Mat {
        let mut m = self.right.clone();
        for (j, q) in self.q.iter().enumerate() {
            let v = q.value(lambda);
            for x in m.column_mut(j).iter_mut() {
                *x *= v;
            }
        }
        m * &self.left
    }
}

pub fn q_operator(params: &ModelParams, lines: &[SpectralLine]) -> Result<QOperator> {
    let dim = params.space().dim;
    if lines.len() != dim || lines.iter().any(|l| l.q.is_none()) {
        let got = lines.iter().filter(|l| l.q.is_some()).count();
        return Err(SpectrumError::Incomplete { got, expected: dim });
    }
    let mut right = Mat::zeros(dim, dim);
    for (j, l) in lines.iter().enumerate() {
        right.set_column(j, &l.eigvec);
    }
    let left = right.clone().try_inverse().ok_or_else(|| SpectrumError::Degenerate("eigenvectors dependent".into()))?;
    Ok(QOperator { q: lines.iter().map(|l| l.q.clone().unwrap()).collect(), right, left })
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct QOperatorReport {
    pub q_commute: f64,
    pub tau_commute: f64,
    pub baxter: f64,
    pub self_adjoint: f64,
}

pub fn q_operator_checks(params: &ModelParams, op: &QOperator, eps: i32) -> Result<QOperatorReport> {
    let (a, d) = sadj_baxter_coeffs(params, eps);
    let root = params.root();
    let pairs = [
        (C64::new(0.81, 0.22), C64::new(-0.47, 1.03)),
        (C64::new(1.12, -0.35), C64::new(0.64, 0.58)),
        (C64::new(-0.93, -0.41), C64::new(0.39, -1.17)),
    ];
    let mut rep = QOperatorReport::default();
    for (l, m) in pairs {
        let (ql, qm) = (op.at(l), op.at(m));
        let tl = transfer(params, l)?;
        rep.q_commute = rep.q_commute.max(crate::linalg::commutator_residual(&ql, &qm).rel());
        rep.tau_commute = rep.tau_commute.max(crate::linalg::commutator_residual(&tl, &qm).rel());
        let lhs = &ql * &tl;
        let rhs = op.at(l / root.q) * a.value(l) + op.at(l * root.q) * d.value(l);
        rep.baxter = rep.baxter.max((&lhs - &rhs).norm() / lhs.norm().max(rhs.norm()));
        let sa = (ql.adjoint() - op.at(l.conj() * eps as f64)).norm() / ql.norm();
        rep.self_adjoint = rep.self_adjoint.max(sa);
    }
    Ok(rep)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{make_sadj_subvariety, make_selfadjoint, sample_params, SelfAdjointFree, SubvarietyFree};
    use crate::sov::{regauge, sov_basis_recursive, sov_coefficients};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn root3() -> UnityRoot {
        UnityRoot::new(3, 2).unwrap()
    }

    fn subvariety(n: usize, seed: u64, eps: i32) -> ModelParams {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let free = SubvarietyFree::sample(&mut rng, n);
        make_sadj_subvariety(&root3(), &free, eps).unwrap()
    }

    #[test]
    fn lines_complete_with_parity() {
        let pr = sample_params(&root3(), 2, &mut ChaCha8Rng::seed_from_u64(3));
        let lines = joint_diagonalize(&pr).unwrap();
        assert_eq!(lines.len(), 9);
        for l in &lines {
            assert!(l.residual("parity_leak").unwrap() < 1e-9, "{:?}", l.residuals);
            assert!(l.residual("asymptotics").unwrap() < 1e-6, "{:?}", l.residuals);
        }
    }

    #[test]
    fn selfadjoint_t_is_real() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for eps in [1, -1] {
            let free: Vec<SelfAdjointFree> = (0..2)
                .map(|_| SelfAdjointFree {
                    alpha: C64::from_polar(rng.gen_range(0.6..1.6), rng.gen_range(0.0..std::f64::consts::TAU)),
                    a: C64::from_polar(rng.gen_range(0.6..1.6), rng.gen_range(0.0..std::f64::consts::TAU)),
                    b: C64::from_polar(rng.gen_range(0.6..1.6), rng.gen_range(0.0..std::f64::consts::TAU)),
                })
                .collect();
            let pr = make_selfadjoint(&root3(), &free, eps).unwrap();
            for l in joint_diagonalize(&pr).unwrap() {
                let im = l.t.terms().map(|(_, c)| c.im.abs()).fold(0.0, f64::max);
                assert!(im < 1e-9 * l.t.max_abs(), "eps {eps}");
            }
        }
    }

    #[test]
    fn expansion_matches_dense() {
        let pr = sample_params(&root3(), 3, &mut ChaCha8Rng::seed_from_u64(4));
        let t = LaurentPoly::from_terms(&[(1, C64::new(0.3, -1.2)), (-1, C64::new(0.7, 0.2)), (3, C64::new(-0.4, 0.9))]);
        let spec = FunctionalMatrixSpec::gauge(&pr, t);
        assert!(spec.pairing_residual(&pr) < 1e-12);
        for &l in &[C64::new(0.8, 0.4), C64::new(-1.1, 0.3)] {
            let (x, y) = (det_expansion(&spec, l), det_dense(&spec, l));
            assert!((x - y).norm() < 1e-10 * x.norm().max(1.0), "{x} {y}");
        }
    }

    #[test]
    fn det_certifies_genuine_lines() {
        let pr = sample_params(&root3(), 2, &mut ChaCha8Rng::seed_from_u64(5));
        let lines = joint_diagonalize(&pr).unwrap();
        for l in &lines {
            let det = det_functional(&FunctionalMatrixSpec::gauge(&pr, l.t.clone())).unwrap();
            assert!(det.relative() < 1e-6, "{}", det.relative());
            assert!(det.asymptotic(2) < 1e-6);
        }
        let mut bad = lines[0].t.clone();
        bad = &bad + &LaurentPoly::monomial(0, C64::new(1e-3 * bad.max_abs(), 0.0));
        let det = det_functional(&FunctionalMatrixSpec::gauge(&pr, bad)).unwrap();
        assert!(det.relative() > 1e-4);
    }

    #[test]
    fn det_depends_only_on_products() {
        let pr = subvariety(2, 9, 1);
        let lines = joint_diagonalize(&pr).unwrap();
        let t = lines[4].t.clone();
        let x = det_functional(&FunctionalMatrixSpec::gauge(&pr, t.clone())).unwrap();
        let y = det_functional(&FunctionalMatrixSpec::subvariety(&pr, t, 1)).unwrap();
        assert!(x.poly.coeff_distance(&y.poly) < 1e-8 * x.scale);
    }

    #[test]
    fn sov_wavefunctions_factorize() {
        let pr = sample_params(&root3(), 3, &mut ChaCha8Rng::seed_from_u64(6));
        let basis = sov_basis_recursive(&pr).unwrap();
        let coeffs = sov_coefficients(&pr, &basis.grid).unwrap();
        let basis = regauge(&pr, &basis, &coeffs).unwrap();
        let lines = joint_diagonalize(&pr).unwrap();
        let cert = certify_spectrum(&pr, &lines, Some((&basis, &coeffs))).unwrap();
        assert!(cert.all_pass(), "{:?}", cert.lines.iter().find(|l| !l.pass));
    }

    #[test]
    fn subvariety_baxter_pipeline() {
        for (eps, seed) in [(1, 17u64), (-1, 18)] {
            let pr = subvariety(2, seed, eps);
            let mut lines = joint_diagonalize(&pr).unwrap();
            attach_baxter(&pr, &mut lines, eps).unwrap();
            for l in &lines {
                let r = &l.residuals;
                assert!(r["baxter"] < 1e-9, "{r:?}");
                assert!(r["cofactor_agreement"] < 1e-6, "{r:?}");
                assert!(r["bethe"] < 1e-6, "{r:?}");
                assert!(r["t_reconstruction"] < 1e-7, "{r:?}");
                assert_eq!(r["congruence"], 0.0, "k {} a {:?} b {:?}", l.k, l.a_t, l.b_t);
                assert_eq!(r["p_string_free"], 0.0);
                assert_eq!(r["eps_self_adjoint"], 0.0, "{:?}", l.bethe_roots);
            }
            let op = q_operator(&pr, &lines).unwrap();
            let rep = q_operator_checks(&pr, &op, eps).unwrap();
            assert!(rep.q_commute < 1e-8 && rep.tau_commute < 1e-8, "{rep:?}");
            assert!(rep.baxter < 1e-7, "{rep:?}");
            assert!(rep.self_adjoint < 1e-8, "{rep:?}");
        }
    }

    #[test]
    fn cofactor_identities() {
        let pr = subvariety(2, 23, 1);
        let (a, d) = sadj_baxter_coeffs(&pr, 1);
        let lines = joint_diagonalize(&pr).unwrap();
        for l in &lines {
            let sol = q_from_cofactor(&l.t, &a, &d, pr.root(), Some(1)).unwrap();
            let r = &sol.report;
            assert!(r.shift_identity < 1e-9, "{r:?}");
            assert!(r.c11_odd_leak < 1e-8, "{r:?}");
            assert!(r.c21_reflection < 1e-9 && r.c1p_reflection < 1e-9, "{r:?}");
            assert!(r.product_identity < 1e-7, "{r:?}");
            assert!(r.baxter_cofactor < 1e-8, "{r:?}");
            assert!(r.c1p_expansion < 1e-9 && r.c12_expansion < 1e-9, "{r:?}");
            assert!(r.conjugation.unwrap() < 1e-9, "{r:?}");
            assert!(r.zero_sets_agree && !r.fell_back, "{r:?}");
        }
    }

    #[test]
    fn single_site_nullspace() {
        let pr = subvariety(1, 31, 1);
        let (a, d) = sadj_baxter_coeffs(&pr, 1);
        let lines = joint_diagonalize(&pr).unwrap();
        assert_eq!(lines.len(), 3);
        for l in &lines {
            let s = q_from_nullspace(&l.t, &a, &d, pr.root()).unwrap();
            assert!(s.q.hi() <= 2);
            assert!(s.baxter < 1e-9);
            let scaled = s.q.scale(C64::new(-2.5, 0.7));
            let r1 = baxter_residual(&l.t, &a, &d, &scaled, pr.root(), &baxter_grid());
            assert!((r1 - s.baxter).abs() < 1e-12);
        }
    }
}
