//! Generalized Baxter Q-operator for arbitrary cyclic representations.
//!
//! The Lax operator is gauged by lower-triangular matrices depending on the
//! right variables z'_n and on parameters r_n. Its entries are then
//! rewritten through 2N + 1 points of C^3: a point pbar carrying the
//! spectral parameter, its rescalings pbar_n = (x/sigma_n, y sigma_n,
//! s sigma_n), and points q_n, r_n that do not depend on lambda. The kernel is a
//! product of Y-functions, i.e. pairs of W-functions with normalizations that
//! make them cyclic. The sigma_n^p solve a chain of Moebius maps whose
//! closure is an eigenvector problem for a 2 x 2 matrix similar to the
//! average monodromy M(Lambda).

use num_complex::Complex64 as C64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::algebra::{poly_roots, UnityRoot};
use crate::averages::{average_monodromy, omega_eigenvalues, AverageMatrix};
use crate::chp::{chp_transfer, tau2_params_from_curve, ChpConfig, ChpError, CurvePoint, Which};
use crate::linalg::{one, proportionality, zero, Mat, Residual};
use crate::model::{lax_local, qdet_scalar, transfer, ModelError, ModelParams};
use crate::weyl::{LocalOp, Space, WeylError};

/// Accepted relative defect of the Y-function cyclicity.
pub const CYCLICITY_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BaxterQError {
    #[error("degenerate sigma chain: {0}")]
    Degenerate(String),
    #[error("vanishing denominator in {0}")]
    Pole(&'static str),
    #[error("Y-function cyclicity fails at site {site} (residual {residual:.3e})")]
    Cyclicity { site: usize, residual: f64 },
    #[error("coordinates of a gauge point must be nonzero")]
    ZeroCoordinate,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Weyl(#[from] WeylError),
    #[error(transparent)]
    Chp(#[from] ChpError),
}

pub type Result<T> = std::result::Result<T, BaxterQError>;

type M2 = [[C64; 2]; 2];

fn mul2(a: &M2, b: &M2) -> M2 {
    let mut c = [[zero(); 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            c[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j];
        }
    }
    c
}

fn det2(a: &M2) -> C64 {
    a[0][0] * a[1][1] - a[0][1] * a[1][0]
}

fn rel(a: C64, b: C64) -> f64 {
    let s = a.norm().max(b.norm());
    if s == 0.0 {
        0.0
    } else {
        (a - b).norm() / s
    }
}

/// A point (x, y, s) of C^3, not necessarily on a chiral Potts curve.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaugePoint {
    pub x: C64,
    pub y: C64,
    pub s: C64,
}

impl GaugePoint {
    pub fn new(x: C64, y: C64, s: C64) -> Result<Self> {
        if x == zero() || y == zero() || s == zero() {
            return Err(BaxterQError::ZeroCoordinate);
        }
        Ok(GaugePoint { x, y, s })
    }

    pub fn from_curve(pt: &CurvePoint) -> Self {
        GaugePoint { x: pt.x(), y: pt.y(), s: pt.s() }
    }

    pub fn t(&self) -> C64 {
        self.x * self.y
    }

    /// Xi acts as (x, y, s) -> (q x, q y, s).
    pub fn xi(&self, root: &UnityRoot, power: i64) -> Self {
        let f = root.pow(power);
        GaugePoint { x: self.x * f, y: self.y * f, s: self.s }
    }

    /// (x/sigma, y sigma, s sigma).
    pub fn rescaled(&self, sigma: C64) -> Self {
        GaugePoint { x: self.x / sigma, y: self.y * sigma, s: self.s * sigma }
    }
}

/// W_qp(z(m))/W_qp(z(0)) for any integer m, z(m) = q^{-2m}, from the
/// defining product (no reduction mod p).
pub fn w_ext(root: &UnityRoot, q: &GaugePoint, p: &GaugePoint, m: i64) -> C64 {
    let step = |k: i64| {
        let qk = root.pow(-2 * k);
        q.s / p.s * (p.y - qk * q.x) / (q.y - qk * p.x)
    };
    if m >= 0 {
        (1..=m).fold(one(), |acc, k| acc * step(k))
    } else {
        (m + 1..=0).fold(one(), |acc, k| acc / step(k))
    }
}

/// Wbar_qp(z(m))/Wbar_qp(z(0)) for any integer m.
pub fn wbar_ext(root: &UnityRoot, q: &GaugePoint, p: &GaugePoint, m: i64) -> C64 {
    let step = |k: i64| {
        let qk = root.pow(-2 * k);
        p.s * q.s * (root.pow(-2) * q.x - qk * p.x) / (p.y - qk * q.y)
    };
    if m >= 0 {
        (1..=m).fold(one(), |acc, k| acc * step(k))
    } else {
        (m + 1..=0).fold(one(), |acc, k| acc / step(k))
    }
}

/// Max relative defect of the four Xi-recursions of W and Wbar over z in S_p:
/// W_qp(qz)/W_{q Xi(p)}(z) = z^{1/2} W_qp(z(l)) (1 - x_q/(q y_p))/(1 - x_q z/(q y_p)),
/// W_qp(qz)/W_{q Xi^-1(p)}(z) = z^{1/2} W_qp(z(l)) (1 - q y_q/(x_p z))/(1 - q y_q/x_p),
/// Wbar_qp(qz)/Wbar_{q Xi(p)}(z) = z^{-1/2} Wbar_qp(z(l)) (1 - y_q z/(q y_p))/(1 - y_q/(q y_p)),
/// Wbar_qp(qz)/Wbar_{q Xi^-1(p)}(z) = z^{-1/2} Wbar_qp(z(l)) (1 - x_q/(q x_p))/(1 - x_q/(q x_p z)).
/// W(z(l)) stands for W(z(-l-1)), so the identities need cyclic tables,
/// i.e. p and q on a common curve.
pub fn xi_recursion_residual(root: &UnityRoot, q: &GaugePoint, p: &GaugePoint) -> f64 {
    let l = root.l as i64;
    let qq = root.q;
    let (xp, xm) = (p.xi(root, 1), p.xi(root, -1));
    let wl = w_ext(root, q, p, l);
    let wbl = wbar_ext(root, q, p, l);
    let mut worst = 0.0f64;
    for m in 0..root.p as i64 {
        // z = z(m) = q^{-2m}, z^{1/2} = q^{-m}, q z = z(m - l - 1)
        let z = root.pow(-2 * m);
        let zh = root.pow(-m);
        let mq = m - l - 1;
        let w_up = w_ext(root, q, p, mq);
        let wb_up = wbar_ext(root, q, p, mq);
        let r1 = zh * wl * (one() - q.x / (qq * p.y)) / (one() - q.x * z / (qq * p.y));
        let r2 = zh * wl * (one() - qq * q.y / (p.x * z)) / (one() - qq * q.y / p.x);
        let r3 = wbl / zh * (one() - q.y * z / (qq * p.y)) / (one() - q.y / (qq * p.y));
        let r4 = wbl / zh * (one() - q.x / (qq * p.x)) / (one() - q.x / (qq * p.x * z));
        worst = worst
            .max(rel(w_up / w_ext(root, q, &xp, m), r1))
            .max(rel(w_up / w_ext(root, q, &xm, m), r2))
            .max(rel(wb_up / wbar_ext(root, q, &xp, m), r3))
            .max(rel(wb_up / wbar_ext(root, q, &xm, m), r4));
    }
    worst
}

/// Which eigenvector of the closure matrix fixes sigma_1^p: the one whose
/// eigenvalue corresponds to Omega_+ (closest to A(Lambda)) or Omega_-.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum EigenBranch {
    Plus,
    Minus,
}

impl EigenBranch {
    fn other(self) -> Self {
        match self {
            EigenBranch::Plus => EigenBranch::Minus,
            EigenBranch::Minus => EigenBranch::Plus,
        }
    }
}

/// Free choices of the construction. pbar(lambda) = (1/(lambda rho), rho/lambda, s_pbar),
/// so that t_pbar = lambda^-2 and (y_pbar/x_pbar)^{1/2} = rho. Only the
/// products s_{q_n} s_{r_n} are fixed by the Lax parameters; `s_q` splits them
/// (default s_{q_n} = s_{q_n} s_{r_n}, s_{r_n} = 1).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaugeOptions {
    pub rho: C64,
    pub s_pbar: C64,
    pub s_q: Option<Vec<C64>>,
    pub branch: EigenBranch,
}

impl Default for GaugeOptions {
    fn default() -> Self {
        GaugeOptions { rho: one(), s_pbar: one(), s_q: None, branch: EigenBranch::Plus }
    }
}

/// Solution of the cyclicity conditions at a given lambda. The chain depends
/// on lambda only through Lambda = lambda^p, so it also serves lambda q^j.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SigmaChain {
    pub lambda: C64,
    pub rho: C64,
    pub pbar: GaugePoint,
    pub sigma: Vec<C64>,
    pub sigma_p: Vec<C64>,
    /// r_n = sigma_n rho.
    pub r_gauge: Vec<C64>,
    pub pbar_points: Vec<GaugePoint>,
    pub q_points: Vec<GaugePoint>,
    pub r_points: Vec<GaugePoint>,
    pub mobius: Vec<M2>,
    pub closure_matrix: M2,
    /// Eigenvalue of the closure matrix carried by (h_1, k_1), and the other one.
    pub eigenvalue: C64,
    pub other_eigenvalue: C64,
    pub branch: EigenBranch,
    /// |sigma_{N+1}^p - sigma_1^p| relative.
    pub closure: f64,
    /// Per-site relative defect of the cyclicity conditions.
    pub cyclicity: Vec<f64>,
    /// Power j of q^{2j} multiplying the principal p-th root, per site.
    pub root_index: Vec<usize>,
}

impl SigmaChain {
    pub fn n(&self) -> usize {
        self.sigma.len()
    }

    /// pbar at lambda q^shift (the Xi^shift image of pbar).
    pub fn pbar_at(&self, root: &UnityRoot, shift: i64) -> GaugePoint {
        self.pbar.xi(root, -shift)
    }

    fn site_next(&self, n: usize) -> usize {
        (n + 1) % self.n()
    }
}

/// The lambda-independent points q_n, r_n of the parametrization:
/// x_q = -q^{3/2} b/beta, y_q = q^{-1/2} alpha/a, x_r = q^{1/2} d/beta,
/// y_r = -q^{1/2} alpha/c, s_q s_r = -alpha beta/(c a).
pub fn site_points(params: &ModelParams, s_q: Option<&[C64]>) -> Result<(Vec<GaugePoint>, Vec<GaugePoint>)> {
    let root = params.root();
    let (qh, q3) = (root.half_pow(1), root.half_pow(3));
    let mut qs = Vec::with_capacity(params.n());
    let mut rs = Vec::with_capacity(params.n());
    for (n, s) in params.sites().iter().enumerate() {
        let prod = -s.alpha * s.beta / (s.c * s.a);
        let sq = s_q.map(|v| v[n]).unwrap_or(prod);
        qs.push(GaugePoint::new(-q3 * s.b / s.beta, s.alpha / (qh * s.a), sq)?);
        rs.push(GaugePoint::new(qh * s.d / s.beta, -qh * s.alpha / s.c, prod / sq)?);
    }
    Ok((qs, rs))
}

/// A_n: sigma_{n+1}^p = f_{A_n}(sigma_n^p) is the cyclicity condition of site n.
fn mobius_matrix(p: usize, pbar: &GaugePoint, q: &GaugePoint, r: &GaugePoint) -> M2 {
    let e = p as i32;
    let (x, y) = (pbar.x.powi(e), pbar.y.powi(e));
    let ss = (q.s * r.s).powi(e);
    let (xq, yq, xr, yr) = (q.x.powi(e), q.y.powi(e), r.x.powi(e), r.y.powi(e));
    [[ss * x * y - yq * yr, x * yr - ss * x * xq], [ss * y * xr - y * yq, x * y - ss * xq * xr]]
}

/// s_q^p s_r^p (sigma'^p x_r^p - x^p)(sigma^p y^p - x_q^p) / ((sigma'^p y^p - y_r^p)(sigma^p y_q^p - x^p)), minus 1.
fn cyclicity_defect(p: usize, pbar: &GaugePoint, q: &GaugePoint, r: &GaugePoint, sp: C64, sp1: C64) -> f64 {
    let e = p as i32;
    let (x, y) = (pbar.x.powi(e), pbar.y.powi(e));
    let lhs = (q.s * r.s).powi(e) * (sp1 * r.x.powi(e) - x) * (sp * y - q.x.powi(e));
    let rhs = (sp1 * y - r.y.powi(e)) * (sp * q.y.powi(e) - x);
    rel(lhs, rhs)
}

/// Scalar c with closure matrix = c D M(Lambda) D^-1, D = diag(-(x/y)^{p/2}, 1):
/// c = prod_n (t_pbar lambda alpha_n/(a_n c_n))^p.
pub fn similarity_scalar(params: &ModelParams, lambda: C64) -> C64 {
    let p = params.p() as i32;
    params.sites().iter().fold(one(), |acc, s| acc * (s.alpha / (lambda * s.a * s.c)).powi(p))
}

fn eigen2(m: &M2) -> (C64, C64) {
    let tr = m[0][0] + m[1][1];
    let disc = (tr * tr / 4.0 - det2(m)).sqrt();
    (tr / 2.0 + disc, tr / 2.0 - disc)
}

/// Eigenvector (h, k) for eigenvalue mu, from the better conditioned row.
fn eigvec2(m: &M2, mu: C64) -> (C64, C64) {
    let v1 = (m[0][1], mu - m[0][0]);
    let v2 = (mu - m[1][1], m[1][0]);
    let n1 = v1.0.norm() + v1.1.norm();
    let n2 = v2.0.norm() + v2.1.norm();
    if n1 >= n2 {
        v1
    } else {
        v2
    }
}

/// Builds A_n, the closure matrix, the fixed point sigma_1^p from the
/// eigenvector of the requested branch and the propagated sigma_n^p. If the
/// eigenvector gives sigma_1^p = 0 or infinity the other branch is tried.
pub fn mobius_solve(params: &ModelParams, lambda: C64, opts: &GaugeOptions) -> Result<SigmaChain> {
    match solve_branch(params, lambda, opts, opts.branch) {
        Ok(c) => Ok(c),
        Err(BaxterQError::Degenerate(first)) => solve_branch(params, lambda, opts, opts.branch.other())
            .map_err(|e| BaxterQError::Degenerate(format!("{first}; alternate branch: {e}"))),
        Err(e) => Err(e),
    }
}

fn solve_branch(params: &ModelParams, lambda: C64, opts: &GaugeOptions, branch: EigenBranch) -> Result<SigmaChain> {
    if lambda == zero() {
        return Err(ModelError::ZeroSpectral.into());
    }
    let root = params.root();
    let p = params.p();
    let n = params.n();
    let pbar = GaugePoint::new(1.0 / (lambda * opts.rho), opts.rho / lambda, opts.s_pbar)?;
    let (q_points, r_points) = site_points(params, opts.s_q.as_deref())?;
    let mobius: Vec<M2> = (0..n).map(|i| mobius_matrix(p, &pbar, &q_points[i], &r_points[i])).collect();
    let closure_matrix = mobius.iter().skip(1).fold(mobius[0], |acc, a| mul2(a, &acc));

    let (e1, e2) = eigen2(&closure_matrix);
    let c = similarity_scalar(params, lambda);
    let avg = average_monodromy(params);
    let big = lambda.powi(p as i32);
    let (om_plus, _) = omega_eigenvalues(&avg, big);
    let plus_first = (e1 / c - om_plus).norm() <= (e2 / c - om_plus).norm();
    let (mu, other) = match (branch, plus_first) {
        (EigenBranch::Plus, true) | (EigenBranch::Minus, false) => (e1, e2),
        _ => (e2, e1),
    };
    let scale = closure_matrix.iter().flatten().map(|x| x.norm()).fold(0.0, f64::max);
    if (mu - other).norm() < 1e-12 * scale {
        return Err(BaxterQError::Degenerate("closure matrix has a double eigenvalue".into()));
    }
    let (h, k) = eigvec2(&closure_matrix, mu);
    let hk = h.norm().max(k.norm());
    if h.norm() < 1e-12 * hk || k.norm() < 1e-12 * hk {
        return Err(BaxterQError::Degenerate(format!("sigma_1^p = {:.3e} / {:.3e}", h.norm(), k.norm())));
    }

    let mut hk_seq = vec![(h, k)];
    for a in &mobius {
        let (h, k) = *hk_seq.last().unwrap();
        hk_seq.push((a[0][0] * h + a[0][1] * k, a[1][0] * h + a[1][1] * k));
    }
    let sigma_p_ext: Vec<C64> = hk_seq.iter().map(|(h, k)| h / k).collect();
    if sigma_p_ext.iter().any(|s| !s.is_finite() || s.norm() < 1e-300) {
        return Err(BaxterQError::Degenerate("sigma_n^p vanishes or diverges".into()));
    }
    let closure = rel(sigma_p_ext[n], sigma_p_ext[0]);
    let sigma_p: Vec<C64> = sigma_p_ext[..n].to_vec();
    let cyclicity: Vec<f64> = (0..n)
        .map(|i| cyclicity_defect(p, &pbar, &q_points[i], &r_points[i], sigma_p[i], sigma_p[(i + 1) % n]))
        .collect();

    let inv_p = 1.0 / p as f64;
    let mut chain = SigmaChain {
        lambda,
        rho: opts.rho,
        pbar,
        sigma: sigma_p.iter().map(|s| s.powf(inv_p)).collect(),
        sigma_p,
        r_gauge: Vec::new(),
        pbar_points: Vec::new(),
        q_points,
        r_points,
        mobius,
        closure_matrix,
        eigenvalue: mu,
        other_eigenvalue: other,
        branch,
        closure,
        cyclicity,
        root_index: vec![0; n],
    };
    refresh(&mut chain);

    // Branch of each sigma_n: keep the principal root unless the Y-function
    // fails to be cyclic, then try q^{2j} multiples one site at a time.
    for site in 0..n {
        let principal = chain.sigma[site];
        let mut found = false;
        for j in 0..p {
            chain.sigma[site] = principal * root.pow(2 * j as i64);
            chain.root_index[site] = j;
            refresh(&mut chain);
            let prev = (site + n - 1) % n;
            let ok = [prev, site]
                .iter()
                .all(|&s| y_cyclicity(root, &chain, s, 0).into_iter().fold(0.0, f64::max) < CYCLICITY_TOL);
            if ok {
                found = true;
                break;
            }
        }
        if !found {
            chain.sigma[site] = principal;
            chain.root_index[site] = 0;
            refresh(&mut chain);
        }
    }
    Ok(chain)
}

fn refresh(chain: &mut SigmaChain) {
    chain.r_gauge = chain.sigma.iter().map(|s| s * chain.rho).collect();
    chain.pbar_points = chain.sigma.iter().map(|s| chain.pbar.rescaled(*s)).collect();
}

/// Bases of the cyclic normalizations of site n:
/// N_{q_n pbar_n}(z') = B^{h'/p}, Nbar_{r_n pbar_{n+1}}(z') = Bbar^{h'/p}.
fn normalization_bases(p: usize, chain: &SigmaChain, n: usize) -> (C64, C64) {
    let e = p as i32;
    let n1 = chain.site_next(n);
    let (pb, q, r) = (&chain.pbar, &chain.q_points[n], &chain.r_points[n]);
    let (x, y, s) = (pb.x.powi(e), pb.y.powi(e), pb.s.powi(e));
    let (sn, sn1) = (chain.sigma_p[n], chain.sigma_p[n1]);
    let b = s * (sn * q.y.powi(e) - x) / (q.s.powi(e) * (sn * y - q.x.powi(e)));
    let bbar = (sn1 * y - r.y.powi(e)) / (s * r.s.powi(e) * (sn1 * r.x.powi(e) - x));
    (b, bbar)
}

fn frac_pow(base: C64, h: i64, p: usize) -> C64 {
    (base.ln() * (h as f64 / p as f64)).exp()
}

/// Y^(n)_{lambda q^shift}(z_n | z'_n, z'_{n+1}) with z = q^{2h}, for arbitrary integers h.
pub fn y_value(root: &UnityRoot, chain: &SigmaChain, n: usize, shift: i64, h: i64, hp: i64, hpp: i64) -> C64 {
    let p = root.p;
    let n1 = chain.site_next(n);
    let pb = chain.pbar_at(root, shift);
    let pn = pb.rescaled(chain.sigma[n]);
    let pn1 = pb.rescaled(chain.sigma[n1]);
    let (b, bbar) = normalization_bases(p, chain, n);
    frac_pow(b, hp, p)
        * frac_pow(bbar, hpp, p)
        * w_ext(root, &chain.q_points[n], &pn, hp - h)
        * wbar_ext(root, &chain.r_points[n], &pn1, hpp - h)
}

/// Relative defects of Y under a full period in z_n, z'_n and z'_{n+1}.
pub fn y_cyclicity(root: &UnityRoot, chain: &SigmaChain, n: usize, shift: i64) -> [f64; 3] {
    let p = root.p as i64;
    let mut worst = [0.0f64; 3];
    for h in 0..p {
        for hp in 0..p {
            for hpp in 0..p {
                let y0 = y_value(root, chain, n, shift, h, hp, hpp);
                worst[0] = worst[0].max(rel(y_value(root, chain, n, shift, h + p, hp, hpp), y0));
                worst[1] = worst[1].max(rel(y_value(root, chain, n, shift, h, hp + p, hpp), y0));
                worst[2] = worst[2].max(rel(y_value(root, chain, n, shift, h, hp, hpp + p), y0));
            }
        }
    }
    worst
}

/// Table of Y^(n) over S_p^3, indexed [h][h'][h''] with z = q^{2h}.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct YTable {
    pub p: usize,
    pub values: Vec<C64>,
    /// Defects in z_n, z'_n, z'_{n+1}.
    pub cyclicity: [f64; 3],
}

impl YTable {
    pub fn get(&self, h: usize, hp: usize, hpp: usize) -> C64 {
        self.values[(h * self.p + hp) * self.p + hpp]
    }
}

pub fn y_function(root: &UnityRoot, chain: &SigmaChain, n: usize, shift: i64) -> Result<YTable> {
    let p = root.p;
    let mut values = Vec::with_capacity(p * p * p);
    for h in 0..p as i64 {
        for hp in 0..p as i64 {
            for hpp in 0..p as i64 {
                values.push(y_value(root, chain, n, shift, h, hp, hpp));
            }
        }
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(BaxterQError::Pole("Y-function"));
    }
    let cyclicity = y_cyclicity(root, chain, n, shift);
    let worst = cyclicity.iter().copied().fold(0.0, f64::max);
    if worst > CYCLICITY_TOL {
        return Err(BaxterQError::Cyclicity { site: n + 1, residual: worst });
    }
    Ok(YTable { p, values, cyclicity })
}

/// Pointwise defect of the shift recursion in z_n,
/// Y(z q^-1)/Y(z q) = -(r_n z'_n)/(r_{n+1} z'_{n+1}) (alpha beta/(c a))
///   (1 + q^{1/2} l b/(beta r_n) z/z'_n)(1 - l d r_{n+1}/(q^{1/2} beta) z'_{n+1}/z)
///   / ((1 - q^{1/2} r_n l alpha/a z'_n/z)(1 + l alpha/(q^{1/2} r_{n+1} c) z/z'_{n+1})).
pub fn y_shift_recursion_residual(params: &ModelParams, chain: &SigmaChain, n: usize) -> f64 {
    let root = params.root();
    let (qh, l) = (root.half_pow(1), root.l as i64);
    let s = params.site(n + 1);
    let lam = chain.lambda;
    let (rn, rn1) = (chain.r_gauge[n], chain.r_gauge[chain.site_next(n)]);
    let p = root.p as i64;
    let mut worst = 0.0f64;
    for h in 0..p {
        for hp in 0..p {
            for hpp in 0..p {
                // z q^-1 = q^{2(h + l)}, z q = q^{2(h - l)}
                let lhs = y_value(root, chain, n, 0, h + l, hp, hpp) / y_value(root, chain, n, 0, h - l, hp, hpp);
                let (z, zp, zpp) = (root.pow(2 * h), root.pow(2 * hp), root.pow(2 * hpp));
                let rhs = -(rn * zp) / (rn1 * zpp) * s.alpha * s.beta / (s.c * s.a)
                    * (one() + qh * lam * s.b / (s.beta * rn) * z / zp)
                    * (one() - lam * s.d * rn1 / (qh * s.beta) * zpp / z)
                    / ((one() - qh * rn * lam * s.alpha / s.a * zp / z)
                        * (one() + lam * s.alpha / (qh * rn1 * s.c) * z / zpp));
                worst = worst.max(rel(lhs, rhs));
            }
        }
    }
    worst
}

/// Pointwise defect of the two lambda-shift recursions,
/// Y_l(z q)/Y_{l/q}(z) = (z'_{n+1}/z'_n)^{1/2} f_n (1 + g_b)/(1 + g_b z/z'_n) (1 + g_c z/z'_{n+1})/(1 + g_c),
/// Y_l(z q)/Y_{ql}(z) = (z'_{n+1}/z'_n)^{1/2} f_n (1 - g_a z'_n/z)/(1 - g_a) (1 - g_d)/(1 - g_d z'_{n+1}/z),
/// with g_b = q^{1/2} l b/(beta r_n), g_c = l alpha/(q^{1/2} r_{n+1} c),
/// g_a = q^{1/2} r_n l alpha/a, g_d = l d r_{n+1}/(q^{1/2} beta).
pub fn y_lambda_recursion_residual(params: &ModelParams, chain: &SigmaChain, n: usize) -> f64 {
    let root = params.root();
    let (qh, l) = (root.half_pow(1), root.l as i64);
    let s = params.site(n + 1);
    let lam = chain.lambda;
    let (rn, rn1) = (chain.r_gauge[n], chain.r_gauge[chain.site_next(n)]);
    let f = f_factor(root, chain, n, 0);
    let gb = qh * lam * s.b / (s.beta * rn);
    let gc = lam * s.alpha / (qh * rn1 * s.c);
    let ga = qh * rn * lam * s.alpha / s.a;
    let gd = lam * s.d * rn1 / (qh * s.beta);
    let p = root.p as i64;
    let mut worst = 0.0f64;
    for h in 0..p {
        for hp in 0..p {
            for hpp in 0..p {
                // z q = q^{2(h - l)}; (z'_{n+1}/z'_n)^{1/2} = q^{h'' - h'}
                let up = y_value(root, chain, n, 0, h - l, hp, hpp);
                let (z, zp, zpp) = (root.pow(2 * h), root.pow(2 * hp), root.pow(2 * hpp));
                let half = root.pow(hpp - hp);
                let r_minus = half * f * (one() + gb) / (one() + gb * z / zp) * (one() + gc * z / zpp) / (one() + gc);
                let r_plus = half * f * (one() - ga * zp / z) / (one() - ga) * (one() - gd) / (one() - gd * zpp / z);
                worst = worst
                    .max(rel(up / y_value(root, chain, n, -1, h, hp, hpp), r_minus))
                    .max(rel(up / y_value(root, chain, n, 1, h, hp, hpp), r_plus));
            }
        }
    }
    worst
}

/// f_n = W_{q_n pbar_n}(z(l)) Wbar_{r_n pbar_{n+1}}(z(l)) (ratios to z(0)) at lambda q^shift.
pub fn f_factor(root: &UnityRoot, chain: &SigmaChain, n: usize, shift: i64) -> C64 {
    let l = root.l as i64;
    let pb = chain.pbar_at(root, shift);
    let pn = pb.rescaled(chain.sigma[n]);
    let pn1 = pb.rescaled(chain.sigma[chain.site_next(n)]);
    w_ext(root, &chain.q_points[n], &pn, l) * wbar_ext(root, &chain.r_points[n], &pn1, l)
}

/// Q_{lambda q^shift}(z, z') = prod_n Y^(n)(z_n | z'_n, z'_{n+1}) on the u-eigenbasis.
pub fn generalized_q(params: &ModelParams, chain: &SigmaChain, shift: i64) -> Result<Mat> {
    let root = params.root();
    let n = params.n();
    let sp = Space::new(root.clone(), n)?;
    let tables: Vec<YTable> = (0..n).map(|i| y_function(root, chain, i, shift)).collect::<Result<_>>()?;
    let dim = sp.dim;
    let rows: Vec<Vec<C64>> = (0..dim)
        .into_par_iter()
        .map(|i| {
            let z = sp.state(i);
            (0..dim)
                .map(|j| {
                    let zp = sp.state(j);
                    (0..n).fold(one(), |acc, s| {
                        acc * tables[s].get(z.digits[s], zp.digits[s], zp.digits[(s + 1) % n])
                    })
                })
                .collect()
        })
        .collect();
    Ok(Mat::from_fn(dim, dim, |i, j| rows[i][j]))
}

/// max_n || <z| Ltilde_n(lambda)_21 Q_lambda |z'> || relative to the norms of
/// its four terms, with Ltilde_21 = (g L11 + L21) - h (g L12 + L22),
/// g = 1/(r_{n+1} z'_{n+1}), h = 1/(r_n z'_n).
pub fn triangularity_residual(params: &ModelParams, chain: &SigmaChain) -> Result<Residual> {
    let root = params.root();
    let n = params.n();
    let sp = Space::new(root.clone(), n)?;
    let q0 = generalized_q(params, chain, 0)?;
    let mut worst = Residual::new(0.0, 0.0);
    for site in 1..=n {
        let lx = lax_local(params, site, chain.lambda);
        let ops: Vec<LocalOp> = [&lx[0][0], &lx[0][1], &lx[1][0], &lx[1][1]].iter().map(|m| LocalOp::from_dense(m)).collect();
        let terms: Vec<Mat> = ops.iter().map(|o| sp.apply_left(site, o, &q0)).collect();
        let (mut raw, mut scale) = (0.0f64, 0.0f64);
        for j in 0..sp.dim {
            let zp = sp.state(j);
            let s0 = site - 1;
            let s1 = site % n;
            let g = 1.0 / (chain.r_gauge[s1] * root.pow(2 * zp.digits[s1] as i64));
            let h = 1.0 / (chain.r_gauge[s0] * root.pow(2 * zp.digits[s0] as i64));
            let coef = [g, -h * g, one(), -h];
            let col: Vec<C64> = (0..sp.dim).map(|i| (0..4).map(|t| coef[t] * terms[t][(i, j)]).sum()).collect();
            raw += col.iter().map(|x| x.norm_sqr()).sum::<f64>();
            scale += (0..4).map(|t| coef[t].norm() * terms[t].column(j).norm()).sum::<f64>().powi(2);
        }
        let r = Residual::new(raw.sqrt(), scale.sqrt());
        if r.rel() >= worst.rel() {
            worst = r;
        }
    }
    Ok(worst)
}

/// Baxter coefficients a_B, d_B at lambda q^shift:
/// a_B = (-1)^N prod beta_n f_n (1/l + q^-1 alpha d/(beta c) l)(1 + q^{1/2} l b/(beta r_n))/(1 + l alpha/(q^{1/2} r_{n+1} c)),
/// d_B = (-1)^N prod beta_n f_n (1/l + q alpha b/(beta a) l)(1 - l d r_{n+1}/(q^{1/2} beta))/(1 - q^{1/2} r_n l alpha/a).
pub fn baxter_coefficients(params: &ModelParams, chain: &SigmaChain, shift: i64) -> Result<(C64, C64)> {
    let root = params.root();
    let (q, qh) = (root.q, root.half_pow(1));
    let lam = chain.lambda * root.pow(shift);
    let mut a = one();
    let mut d = one();
    for (n, s) in params.sites().iter().enumerate() {
        let (rn, rn1) = (chain.r_gauge[n], chain.r_gauge[chain.site_next(n)]);
        let f = f_factor(root, chain, n, shift);
        let da = one() + lam * s.alpha / (qh * rn1 * s.c);
        let dd = one() - qh * rn * lam * s.alpha / s.a;
        if da.norm() < 1e-14 || dd.norm() < 1e-14 {
            return Err(BaxterQError::Pole("a_B/d_B"));
        }
        a *= -s.beta * f * (1.0 / lam + s.alpha * s.d / (q * s.beta * s.c) * lam) * (one() + qh * lam * s.b / (s.beta * rn)) / da;
        d *= -s.beta * f * (1.0 / lam + q * s.alpha * s.b / (s.beta * s.a) * lam) * (one() - lam * s.d * rn1 / (qh * s.beta)) / dd;
    }
    Ok((a, d))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BaxterReport {
    pub residual: Residual,
    pub a_b: C64,
    pub d_b: C64,
    /// Least-squares coefficients of tau2 Q_l on (Q_{l/q}, Q_{ql}).
    pub fitted: (C64, C64),
}

/// || tau2(l) Q_l - a_B Q_{l/q} - d_B Q_{ql} ||.
pub fn baxter_residual(params: &ModelParams, chain: &SigmaChain) -> Result<BaxterReport> {
    let q0 = generalized_q(params, chain, 0)?;
    let qm = generalized_q(params, chain, -1)?;
    let qp = generalized_q(params, chain, 1)?;
    let tau = transfer(params, chain.lambda)?;
    let lhs = &tau * &q0;
    let (a_b, d_b) = baxter_coefficients(params, chain, 0)?;
    let diff = &lhs - &qm * a_b - &qp * d_b;
    let scale = lhs.norm().max(a_b.norm() * qm.norm() + d_b.norm() * qp.norm());
    Ok(BaxterReport { residual: Residual::new(diff.norm(), scale), a_b, d_b, fitted: fit_pair(&lhs, &qm, &qp) })
}

fn fit_pair(lhs: &Mat, u: &Mat, v: &Mat) -> (C64, C64) {
    let dot = |a: &Mat, b: &Mat| a.iter().zip(b.iter()).map(|(x, y)| x.conj() * y).sum::<C64>();
    let (uu, uv, vv) = (dot(u, u), dot(u, v), dot(v, v));
    let (ul, vl) = (dot(u, lhs), dot(v, lhs));
    let det = uu * vv - uv * uv.conj();
    ((vv * ul - uv * vl) / det, (uu * vl - uv.conj() * ul) / det)
}

/// Averages of the Baxter coefficients and their relations to M(Lambda).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CoefficientReport {
    /// prod_{h=1}^p a_B(l q^h) and prod d_B(l q^h).
    pub a_orbit: C64,
    pub d_orbit: C64,
    /// | a_orbit + d_orbit - (A + D)(Lambda) | relative.
    pub trace: f64,
    /// | a_orbit d_orbit - det M(Lambda) | relative.
    pub det: f64,
    /// | det M(Lambda) - prod_i det_q M(l q^i) | relative.
    pub det_qdet: f64,
    /// a_orbit against the closure eigenvalue divided by the similarity scalar.
    pub eigenvalue: f64,
    /// max_n |sigma_n^p| relations: a_orbit equals the Omega of the chosen branch.
    pub omega: f64,
    /// | N_B - 1 | from the closed p-th power form.
    pub n_b: f64,
    /// max over the orbit of | a_B(l) d_B(l/q)/det_q M(l) - 1 |.
    pub double_ratio: f64,
    /// Closure matrix against c D M D^-1, entrywise relative.
    pub similarity: f64,
}

pub fn coefficient_identities(params: &ModelParams, chain: &SigmaChain) -> Result<CoefficientReport> {
    let root = params.root();
    let p = params.p();
    let e = p as i32;
    let lam = chain.lambda;
    let big = lam.powi(e);
    let avg = average_monodromy(params);
    let m = avg.eval(big);
    let det_m = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    let coeffs: Vec<(C64, C64)> = (1..=p as i64).map(|h| baxter_coefficients(params, chain, h)).collect::<Result<_>>()?;
    let a_orbit = coeffs.iter().fold(one(), |acc, c| acc * c.0);
    let d_orbit = coeffs.iter().fold(one(), |acc, c| acc * c.1);
    let trace = rel(a_orbit + d_orbit, m[0][0] + m[1][1]);
    let det = rel(a_orbit * d_orbit, det_m);
    let qdet_orbit = (1..=p as i64).fold(one(), |acc, h| acc * qdet_scalar(params, lam * root.pow(h)));
    let det_qdet = rel(det_m, qdet_orbit);
    let c = similarity_scalar(params, lam);
    let eigenvalue = rel(a_orbit, chain.eigenvalue / c);
    let (om_plus, om_minus) = omega_eigenvalues(&avg, big);
    let (om_a, om_d) = match chain.branch {
        EigenBranch::Plus => (om_plus, om_minus),
        EigenBranch::Minus => (om_minus, om_plus),
    };
    let omega = rel(a_orbit, om_a).max(rel(d_orbit, om_d));

    let mut double_ratio = 0.0f64;
    for h in 0..p as i64 {
        let (a, _) = baxter_coefficients(params, chain, h)?;
        let (_, d) = baxter_coefficients(params, chain, h - 1)?;
        let qd = qdet_scalar(params, lam * root.pow(h));
        double_ratio = double_ratio.max(rel(a * d, qd));
    }

    let n_b = rel(n_b_closed(params, chain), one());
    let similarity = similarity_defect(params, chain, &avg);
    Ok(CoefficientReport { a_orbit, d_orbit, trace, det, det_qdet, eigenvalue, omega, n_b, double_ratio, similarity })
}

/// N_B(lambda) in its telescoped form
/// prod_n (-beta alpha/(a c))^p (1 + q^{p/2} (b l/(beta r_n))^p)/(1 + q^{p/2} (alpha l/(c r_{n+1}))^p)
///   (1 - q^{p/2} (d l r_{n+1}/beta)^p)/(1 - q^{p/2} (alpha l r_n/a)^p).
pub fn n_b_closed(params: &ModelParams, chain: &SigmaChain) -> C64 {
    let root = params.root();
    let e = params.p() as i32;
    let qp2 = root.half_pow(params.p() as i64);
    let lam = chain.lambda;
    params.sites().iter().enumerate().fold(one(), |acc, (n, s)| {
        let (rn, rn1) = (chain.r_gauge[n], chain.r_gauge[chain.site_next(n)]);
        acc * (-s.beta * s.alpha / (s.a * s.c)).powi(e)
            * (one() + qp2 * (s.b * lam / (s.beta * rn)).powi(e))
            / (one() + qp2 * (s.alpha * lam / (s.c * rn1)).powi(e))
            * (one() - qp2 * (s.d * lam * rn1 / s.beta).powi(e))
            / (one() - qp2 * (s.alpha * lam * rn / s.a).powi(e))
    })
}

fn similarity_defect(params: &ModelParams, chain: &SigmaChain, avg: &AverageMatrix) -> f64 {
    let e = params.p() as i32;
    let m = avg.eval(chain.lambda.powi(e));
    let c = similarity_scalar(params, chain.lambda);
    // -(x/y)^{p/2} with (x/y)^{1/2} = 1/rho
    let dx = -(1.0 / chain.rho).powi(e);
    let target = [[c * m[0][0], c * m[0][1] * dx], [c * m[1][0] / dx, c * m[1][1]]];
    let scale = target.iter().flatten().map(|x| x.norm()).fold(0.0, f64::max);
    let mut worst = 0.0f64;
    for i in 0..2 {
        for j in 0..2 {
            worst = worst.max((chain.closure_matrix[i][j] - target[i][j]).norm() / scale);
        }
    }
    worst
}

/// Checks at a zero Lambda_0 of the average B(Lambda).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BZeroReport {
    pub big: C64,
    /// |B(Lambda_0)| relative to the entries of M.
    pub b_value: f64,
    /// | prod a_B - A(Lambda_0) |, | prod d_B - D(Lambda_0) | relative.
    pub a_match: f64,
    pub d_match: f64,
    /// sigma_1^p C(Lambda_0) against -(x/y)^{p/2} (A - D)(Lambda_0).
    pub sigma_formula: f64,
    /// Whether the second eigenvector is rejected (it gives sigma_1^p = 0).
    pub minus_rejected: bool,
}

/// Runs the "+" construction at every zero of B(Lambda).
pub fn b_zero_checks(params: &ModelParams, opts: &GaugeOptions) -> Result<Vec<BZeroReport>> {
    let e = params.p() as i32;
    let avg = average_monodromy(params);
    let zeros = poly_roots(&avg.b);
    let mut out = Vec::new();
    for big in zeros {
        let lam = crate::averages::lambda_of(big, params.p());
        let m = avg.eval(big);
        let mscale = m.iter().flatten().map(|x| x.norm()).fold(0.0, f64::max);
        let plus = GaugeOptions { branch: EigenBranch::Plus, ..opts.clone() };
        let chain = mobius_solve(params, lam, &plus)?;
        let rep = coefficient_identities(params, &chain)?;
        let a_match = rel(rep.a_orbit, m[0][0]);
        let d_match = rel(rep.d_orbit, m[1][1]);
        let target = -(1.0 / opts.rho).powi(e) * (m[0][0] - m[1][1]);
        let sigma_formula = rel(chain.sigma_p[0] * m[1][0], target);
        let minus = GaugeOptions { branch: EigenBranch::Minus, ..opts.clone() };
        let minus_rejected = matches!(solve_branch(params, lam, &minus, EigenBranch::Minus), Err(BaxterQError::Degenerate(_)));
        out.push(BZeroReport { big, b_value: m[0][1].norm() / mscale, a_match, d_match, sigma_formula, minus_rejected });
    }
    Ok(out)
}

/// Gauge options reproducing the chiral Potts data: pbar = p/c0 (so that
/// rho = y_p lambda/c0 = r) and the individual s of q_n, p.
pub fn chp_gauge_options(cfg: &ChpConfig, pt: &CurvePoint, lambda: C64) -> GaugeOptions {
    GaugeOptions {
        rho: pt.y() * lambda / cfg.c0,
        s_pbar: pt.s(),
        s_q: Some(cfg.q_points.iter().map(|q| q.s()).collect()),
        branch: EigenBranch::Plus,
    }
}

/// Restriction to the chiral Potts curves: the generalized Q at lambda is
/// compared with the transfer matrix T(p). Returns the proportionality
/// defect, the ratio, the chain and the largest |sigma_n^p - 1|.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ChpRestriction {
    pub proportionality: f64,
    pub ratio: C64,
    pub sigma_p_deviation: f64,
    pub branch: EigenBranch,
}

pub fn chp_restriction(root: &UnityRoot, cfg: &ChpConfig, pt: &CurvePoint, lambda: C64) -> Result<ChpRestriction> {
    let params = tau2_params_from_curve(root, cfg)?;
    let base = chp_gauge_options(cfg, pt, lambda);
    let mut best: Option<ChpRestriction> = None;
    for branch in [EigenBranch::Plus, EigenBranch::Minus] {
        let opts = GaugeOptions { branch, ..base.clone() };
        let Ok(chain) = solve_branch(&params, lambda, &opts, branch) else { continue };
        let dev = chain.sigma_p.iter().map(|s| (s - one()).norm()).fold(0.0, f64::max);
        let q = generalized_q(&params, &chain, 0)?;
        let t = chp_transfer(root, cfg, pt, Which::T)?;
        let (res, ratio) = proportionality(q.as_slice(), t.as_slice());
        let cand = ChpRestriction { proportionality: res, ratio, sigma_p_deviation: dev, branch };
        if best.as_ref().is_none_or(|b| cand.sigma_p_deviation < b.sigma_p_deviation) {
            best = Some(cand);
        }
    }
    best.ok_or_else(|| BaxterQError::Degenerate("no branch solves the chain".into()))
}

/// ||[Q_l, Q_m]|| / (||Q_l|| ||Q_m||). Informational: commutativity is not
/// expected for general representations.
pub fn q_commutator(params: &ModelParams, l: C64, m: C64, opts: &GaugeOptions) -> Result<f64> {
    let a = generalized_q(params, &mobius_solve(params, l, opts)?, 0)?;
    let b = generalized_q(params, &mobius_solve(params, m, opts)?, 0)?;
    Ok(((&a * &b) - (&b * &a)).norm() / (a.norm() * b.norm()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chp::curve_solve;
    use crate::model::sample_params;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn params(p: usize, n: usize, seed: u64) -> ModelParams {
        let root = UnityRoot::new(p, 2).unwrap();
        sample_params(&root, n, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    const LAMS: [(f64, f64); 5] = [(0.8, 0.35), (-0.5, 0.6), (1.1, -0.2), (0.4, -0.9), (-0.8, -0.3)];

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(12))]
        #[test]
        fn xi_recursions_on_curve(kr in -0.6f64..0.6, ki in 0.05f64..0.5, tr in 0.2f64..1.5, ti in -1.0f64..1.0, pi in 0usize..2) {
            let p = [3usize, 5][pi];
            let root = UnityRoot::new(p, 2).unwrap();
            let (curve, q) = curve_solve(p, c(kr, ki), c(0.8, 0.3), c(1.0, -0.2)).unwrap();
            let pt = curve.point_with_t(c(tr, ti), 0).unwrap();
            prop_assert!(xi_recursion_residual(&root, &GaugePoint::from_curve(&q), &GaugePoint::from_curve(&pt)) < 1e-10);
        }

        #[test]
        fn baxter_equation_random_params(seed in 0u64..1000, lr in -1.2f64..1.2, li in 0.2f64..1.0) {
            let pr = params(3, 2, seed);
            let chain = mobius_solve(&pr, c(lr, li), &GaugeOptions::default()).unwrap();
            prop_assert!(triangularity_residual(&pr, &chain).unwrap().rel() < 1e-9);
            prop_assert!(baxter_residual(&pr, &chain).unwrap().residual.rel() < 1e-8);
        }
    }

    #[test]
    fn n1_closure_is_a_fixed_point_for_both_roots() {
        let pr = params(3, 1, 5);
        let lam = c(0.8, 0.35);
        let mut fixed = Vec::new();
        for branch in [EigenBranch::Plus, EigenBranch::Minus] {
            let ch = mobius_solve(&pr, lam, &GaugeOptions { branch, ..Default::default() }).unwrap();
            assert_eq!(ch.branch, branch);
            let a = ch.mobius[0];
            let s = ch.sigma_p[0];
            let image = (a[0][0] * s + a[0][1]) / (a[1][0] * s + a[1][1]);
            assert!(rel(image, s) < 1e-12);
            assert!(ch.closure < 1e-12 && ch.cyclicity[0] < 1e-12);
            fixed.push(s);
        }
        assert!(rel(fixed[0], fixed[1]) > 1e-3);
    }

    #[test]
    fn closure_matrix_is_similar_to_average_monodromy() {
        for (n, rho) in [(2, one()), (3, c(0.7, 0.4))] {
            let pr = params(3, n, 11);
            for &(lr, li) in &LAMS {
                let ch = mobius_solve(&pr, c(lr, li), &GaugeOptions { rho, ..Default::default() }).unwrap();
                let rep = coefficient_identities(&pr, &ch).unwrap();
                assert!(rep.similarity < 1e-12, "{rep:?}");
                assert!(rep.eigenvalue < 1e-10 && rep.omega < 1e-10, "{rep:?}");
            }
        }
    }

    #[test]
    fn y_tables_cyclic_and_recursions_hold() {
        for p in [3, 5] {
            let pr = params(p, 2, 3);
            let ch = mobius_solve(&pr, c(0.8, 0.35), &GaugeOptions::default()).unwrap();
            for n in 0..2 {
                for shift in -1..=1 {
                    let t = y_function(pr.root(), &ch, n, shift).unwrap();
                    assert!(t.cyclicity.iter().all(|&x| x < CYCLICITY_TOL));
                }
                assert!(y_shift_recursion_residual(&pr, &ch, n) < 1e-10);
                assert!(y_lambda_recursion_residual(&pr, &ch, n) < 1e-10);
            }
        }
    }

    #[test]
    fn perturbed_sigma_breaks_cyclicity() {
        let pr = params(3, 2, 3);
        let mut ch = mobius_solve(&pr, c(0.8, 0.35), &GaugeOptions::default()).unwrap();
        ch.sigma_p[1] *= 1.01;
        assert!(matches!(y_function(pr.root(), &ch, 0, 0), Err(BaxterQError::Cyclicity { .. })));
    }

    #[test]
    fn formula_coefficients_match_least_squares_fit() {
        for (p, n) in [(3, 1), (3, 3), (5, 2)] {
            let pr = params(p, n, 21);
            for branch in [EigenBranch::Plus, EigenBranch::Minus] {
                let ch = mobius_solve(&pr, c(-0.5, 0.6), &GaugeOptions { branch, ..Default::default() }).unwrap();
                let b = baxter_residual(&pr, &ch).unwrap();
                assert!(b.residual.rel() < 1e-8);
                assert!(rel(b.fitted.0, b.a_b) < 1e-8 && rel(b.fitted.1, b.d_b) < 1e-8);
            }
        }
    }

    #[test]
    fn average_identities_at_five_points() {
        let pr = params(3, 3, 8);
        for &(lr, li) in &LAMS {
            let ch = mobius_solve(&pr, c(lr, li), &GaugeOptions::default()).unwrap();
            let r = coefficient_identities(&pr, &ch).unwrap();
            assert!(r.trace < 1e-8 && r.det < 1e-8 && r.det_qdet < 1e-10, "{r:?}");
            assert!(r.n_b < 1e-10 && r.double_ratio < 1e-10, "{r:?}");
        }
    }

    #[test]
    fn b_zero_branch() {
        let pr = params(3, 3, 8);
        let reps = b_zero_checks(&pr, &GaugeOptions::default()).unwrap();
        assert_eq!(reps.len(), 4);
        for r in reps {
            assert!(r.b_value < 1e-12);
            assert!(r.a_match < 1e-10 && r.d_match < 1e-10 && r.sigma_formula < 1e-10, "{r:?}");
            assert!(r.minus_rejected);
        }
    }

    #[test]
    fn restriction_to_chp_curves_gives_transfer_matrix() {
        let root = UnityRoot::new(3, 2).unwrap();
        let (curve, q1) = curve_solve(3, c(0.3, 0.1), c(0.8, 0.3), c(1.0, -0.2)).unwrap();
        let r1 = curve.point_with_t(c(0.9, -0.3), 1).unwrap();
        let pt0 = curve.point_with_t(c(0.5, 0.4), 0).unwrap();
        let cfg = ChpConfig { curve, c0: c(0.9, 0.2), q_points: vec![q1, q1], r_points: vec![r1, pt0] };
        for &(lr, li) in &LAMS[..3] {
            let lam = c(lr, li);
            let pt = cfg.spectral_point(lam, 0).unwrap();
            let r = chp_restriction(&root, &cfg, &pt, lam).unwrap();
            assert!(r.sigma_p_deviation < 1e-10 && r.proportionality < 1e-10, "{r:?}");
        }
    }

    #[test]
    fn q_commutator_is_finite() {
        let pr = params(3, 2, 4);
        let v = q_commutator(&pr, c(0.8, 0.35), c(-0.5, 0.6), &GaugeOptions::default()).unwrap();
        assert!(v.is_finite());
    }
}
