//! Representation parameters, Lax and monodromy matrices, the transfer
//! matrix, Yang-Baxter residuals, the quantum determinant and builders for
//! self-adjoint representations.

use num_complex::Complex64 as C64;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::algebra::{LaurentPoly, UnityRoot};
use crate::linalg::{one, zero, Mat, Residual};
use crate::weyl::{LocalOp, Space, WeylError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("site {site}: constraint violated (relative residual {residual:.3e})")]
    Constraint { site: usize, residual: f64 },
    #[error("site {0}: zero parameter")]
    ZeroParameter(usize),
    #[error("spectral parameter must be nonzero")]
    ZeroSpectral,
    #[error("infeasible phase chain: {0}")]
    PhaseChain(String),
    #[error(transparent)]
    Weyl(#[from] WeylError),
}

pub type Result<T> = std::result::Result<T, ModelError>;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SiteParams {
    pub alpha: C64,
    pub beta: C64,
    pub gamma: C64,
    pub delta: C64,
    pub a: C64,
    pub b: C64,
    pub c: C64,
    pub d: C64,
}

impl SiteParams {
    /// gamma and delta fixed by alpha gamma = a c and beta delta = b d.
    pub fn derived(alpha: C64, beta: C64, a: C64, b: C64, c: C64, d: C64) -> Self {
        SiteParams { alpha, beta, gamma: a * c / alpha, delta: b * d / beta, a, b, c, d }
    }

    pub fn constraint_residual(&self) -> f64 {
        let r1 = (self.alpha * self.gamma - self.a * self.c).norm()
            / (self.a * self.c).norm().max((self.alpha * self.gamma).norm());
        let r2 = (self.beta * self.delta - self.b * self.d).norm()
            / (self.b * self.d).norm().max((self.beta * self.delta).norm());
        r1.max(r2)
    }

    fn all(&self) -> [C64; 8] {
        [self.alpha, self.beta, self.gamma, self.delta, self.a, self.b, self.c, self.d]
    }

    pub fn powp(&self, p: usize) -> SiteParams {
        let e = p as i32;
        SiteParams {
            alpha: self.alpha.powi(e),
            beta: self.beta.powi(e),
            gamma: self.gamma.powi(e),
            delta: self.delta.powi(e),
            a: self.a.powi(e),
            b: self.b.powi(e),
            c: self.c.powi(e),
            d: self.d.powi(e),
        }
    }
}

/// a_+, a_-, d_+, d_- governing lambda -> infinity / 0.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Asymptotics {
    pub a_plus: C64,
    pub a_minus: C64,
    pub d_plus: C64,
    pub d_minus: C64,
}

/// k_n and mu_{n,+-} of the factorized local quantum determinant.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QdetSite {
    pub k: C64,
    pub mu_plus: C64,
    pub mu_minus: C64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    root: UnityRoot,
    sites: Vec<SiteParams>,
    asym: Asymptotics,
    qdet: Vec<QdetSite>,
}

fn sign_n(n: usize) -> f64 {
    if n.is_multiple_of(2) {
        1.0
    } else {
        -1.0
    }
}

impl ModelParams {
    pub fn new(root: UnityRoot, sites: Vec<SiteParams>) -> Result<Self> {
        for (i, s) in sites.iter().enumerate() {
            if s.all().iter().any(|v| v.norm() == 0.0) {
                return Err(ModelError::ZeroParameter(i + 1));
            }
            let r = s.constraint_residual();
            if !(r < 1e-12) {
                return Err(ModelError::Constraint { site: i + 1, residual: r });
            }
        }
        Ok(Self::new_unchecked(root, sites))
    }

    /// No constraint validation; used for negative controls.
    pub fn new_unchecked(root: UnityRoot, sites: Vec<SiteParams>) -> Self {
        let asym = Self::compute_asymptotics(&sites);
        let qdet = sites.iter().map(|s| Self::compute_qdet_site(&root, s)).collect();
        ModelParams { root, sites, asym, qdet }
    }

    fn compute_asymptotics(sites: &[SiteParams]) -> Asymptotics {
        let n = sites.len();
        let prod = |f: &dyn Fn(&SiteParams) -> C64| sites.iter().fold(one(), |acc, s| acc * f(s));
        Asymptotics {
            a_plus: prod(&|s| s.alpha),
            a_minus: prod(&|s| s.beta) * sign_n(n),
            d_plus: prod(&|s| s.delta) * sign_n(n),
            d_minus: prod(&|s| s.gamma),
        }
    }

    /// mu_{+-} on the principal branch; the sign of k is then fixed so that
    /// k (l/mu+ - mu+/l)(l/mu- - mu-/l) equals the unambiguous product form.
    fn compute_qdet_site(root: &UnityRoot, s: &SiteParams) -> QdetSite {
        let qh = root.half_pow(1);
        let i = C64::new(0.0, 1.0);
        let mu_plus = i * qh * (s.a * s.beta / (s.alpha * s.b)).sqrt();
        let mu_minus = i * qh * (s.c * s.beta / (s.alpha * s.d)).sqrt();
        let k = -root.q * s.beta * s.a * s.c / (s.alpha * mu_plus * mu_minus);
        QdetSite { k, mu_plus, mu_minus }
    }

    pub fn root(&self) -> &UnityRoot {
        &self.root
    }

    pub fn q(&self) -> C64 {
        self.root.q
    }

    pub fn p(&self) -> usize {
        self.root.p
    }

    pub fn n(&self) -> usize {
        self.sites.len()
    }

    pub fn sites(&self) -> &[SiteParams] {
        &self.sites
    }

    pub fn site(&self, n: usize) -> &SiteParams {
        &self.sites[n - 1]
    }

    pub fn asymptotics(&self) -> Asymptotics {
        self.asym
    }

    pub fn qdet_data(&self) -> &[QdetSite] {
        &self.qdet
    }

    /// True when the stored derived data equals a fresh recomputation.
    pub fn derived_consistent(&self) -> bool {
        Self::compute_asymptotics(&self.sites) == self.asym
            && self.sites.iter().zip(&self.qdet).all(|(s, d)| Self::compute_qdet_site(&self.root, s) == *d)
    }

    pub fn space(&self) -> Space {
        Space::new(self.root.clone(), self.n()).expect("dimension checked at construction")
    }

    /// Parameters of the first `m` sites.
    pub fn head(&self, m: usize) -> ModelParams {
        Self::new_unchecked(self.root.clone(), self.sites[..m].to_vec())
    }

    /// Parameters of sites m+1..N, renumbered from 1.
    pub fn tail(&self, m: usize) -> ModelParams {
        Self::new_unchecked(self.root.clone(), self.sites[m..].to_vec())
    }

    pub fn max_constraint_residual(&self) -> f64 {
        self.sites.iter().map(|s| s.constraint_residual()).fold(0.0, f64::max)
    }
}

fn random_complex(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> C64 {
    let r = rng.gen_range(lo..hi);
    let th = rng.gen_range(0.0..std::f64::consts::TAU);
    C64::from_polar(r, th)
}

/// Moduli uniform in [lo, hi], phases uniform; gamma and delta derived.
pub fn sample_sites(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<SiteParams> {
    (0..n)
        .map(|_| {
            let alpha = random_complex(rng, lo, hi);
            let beta = random_complex(rng, lo, hi);
            let a = random_complex(rng, lo, hi);
            let b = random_complex(rng, lo, hi);
            let c = random_complex(rng, lo, hi);
            let d = random_complex(rng, lo, hi);
            SiteParams::derived(alpha, beta, a, b, c, d)
        })
        .collect()
}

pub fn sample_params(root: &UnityRoot, n: usize, rng: &mut ChaCha8Rng) -> ModelParams {
    ModelParams::new(root.clone(), sample_sites(rng, n, 0.5, 2.0)).expect("derived constraints hold")
}

pub type Block = [[Mat; 2]; 2];

/// Lax entries as p x p matrices on the site's Weyl factor.
pub fn lax_local(params: &ModelParams, n: usize, lambda: C64) -> Block {
    let sp = params.space();
    let s = params.site(n);
    let r = params.root();
    let (u, ui, v, vi) = (sp.local_u(), sp.local_u_inv(), sp.local_v(), sp.local_v_inv());
    let qm = r.half_pow(-1);
    let qp = r.half_pow(1);
    [
        [
            &v * (lambda * s.alpha) - &vi * (s.beta / lambda),
            &u * (&v * (qm * s.a) + &vi * (qp * s.b)),
        ],
        [
            &ui * (&v * (qp * s.c) + &vi * (qm * s.d)),
            &v * (s.gamma / lambda) - &vi * (s.delta * lambda),
        ],
    ]
}

pub fn lax(params: &ModelParams, n: usize, lambda: C64) -> Result<Block> {
    if lambda == zero() {
        return Err(ModelError::ZeroSpectral);
    }
    let sp = params.space();
    let l = lax_local(params, n, lambda);
    let e = |m: &Mat| sp.embed(n, m);
    Ok([[e(&l[0][0])?, e(&l[0][1])?], [e(&l[1][0])?, e(&l[1][1])?]])
}

#[derive(Clone, Debug)]
pub struct Monodromy {
    pub a: Mat,
    pub b: Mat,
    pub c: Mat,
    pub d: Mat,
}

impl Monodromy {
    pub fn get(&self, i: usize, j: usize) -> &Mat {
        match (i, j) {
            (0, 0) => &self.a,
            (0, 1) => &self.b,
            (1, 0) => &self.c,
            _ => &self.d,
        }
    }

    pub fn norm(&self) -> f64 {
        (self.a.norm_squared() + self.b.norm_squared() + self.c.norm_squared() + self.d.norm_squared())
            .sqrt()
    }
}

/// Ordered product L_N(lambda) ... L_1(lambda), applied site by site.
pub fn monodromy(params: &ModelParams, lambda: C64) -> Result<Monodromy> {
    if lambda == zero() {
        return Err(ModelError::ZeroSpectral);
    }
    let sp = params.space();
    let dim = sp.dim;
    let mut m: [[Mat; 2]; 2] = [
        [Mat::identity(dim, dim), Mat::zeros(dim, dim)],
        [Mat::zeros(dim, dim), Mat::identity(dim, dim)],
    ];
    for n in 1..=params.n() {
        let l = lax_local(params, n, lambda);
        let ops: Vec<Vec<LocalOp>> =
            l.iter().map(|row| row.iter().map(LocalOp::from_dense).collect()).collect();
        let mut next: [[Mat; 2]; 2] = [
            [Mat::zeros(dim, dim), Mat::zeros(dim, dim)],
            [Mat::zeros(dim, dim), Mat::zeros(dim, dim)],
        ];
        for i in 0..2 {
            for j in 0..2 {
                next[i][j] = sp.apply_left(n, &ops[i][0], &m[0][j]) + sp.apply_left(n, &ops[i][1], &m[1][j]);
            }
        }
        m = next;
    }
    let [[a, b], [c, d]] = m;
    Ok(Monodromy { a, b, c, d })
}

pub fn transfer(params: &ModelParams, lambda: C64) -> Result<Mat> {
    let m = monodromy(params, lambda)?;
    Ok(m.a + m.d)
}

/// Six-vertex R-matrix in the basis (11, 12, 21, 22).
pub fn r_matrix(q: C64, lambda: C64) -> [[C64; 4]; 4] {
    let e = q * lambda - 1.0 / (q * lambda);
    let f = lambda - 1.0 / lambda;
    let g = q - 1.0 / q;
    let z = zero();
    [[e, z, z, z], [z, f, g, z], [z, g, f, z], [z, z, z, e]]
}

/// ||R(l/m)(M(l) x 1)(1 x M(m)) - (1 x M(m))(M(l) x 1)R(l/m)|| with scale
/// ||R|| ||M(l) x 1|| ||1 x M(m)||.
pub fn yang_baxter_residual(params: &ModelParams, lambda: C64, mu: C64) -> Result<Residual> {
    if lambda == zero() || mu == zero() {
        return Err(ModelError::ZeroSpectral);
    }
    let ml = monodromy(params, lambda)?;
    let mm = monodromy(params, mu)?;
    let r = r_matrix(params.q(), lambda / mu);
    let dim = ml.a.nrows();
    // P[K][J] = Ml[k1 j1] Mm[k2 j2], S[I][K] = Mm[i2 k2] Ml[i1 k1]
    let idx = |x: usize| (x / 2, x % 2);
    let mut p: Vec<Vec<Mat>> = vec![vec![Mat::zeros(0, 0); 4]; 4];
    let mut s: Vec<Vec<Mat>> = vec![vec![Mat::zeros(0, 0); 4]; 4];
    for k in 0..4 {
        for j in 0..4 {
            let (k1, k2) = idx(k);
            let (j1, j2) = idx(j);
            p[k][j] = ml.get(k1, j1) * mm.get(k2, j2);
            s[k][j] = mm.get(k2, j2) * ml.get(k1, j1);
        }
    }
    let mut raw2 = 0.0;
    for i in 0..4 {
        for j in 0..4 {
            let mut lhs = Mat::zeros(dim, dim);
            let mut rhs = Mat::zeros(dim, dim);
            for k in 0..4 {
                if r[i][k] != zero() {
                    lhs += &p[k][j] * r[i][k];
                }
                if r[k][j] != zero() {
                    rhs += &s[i][k] * r[k][j];
                }
            }
            raw2 += (lhs - rhs).norm_squared();
        }
    }
    let rn = r.iter().flatten().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
    let scale = rn * 2f64.sqrt() * ml.norm() * 2f64.sqrt() * mm.norm();
    Ok(Residual::new(raw2.sqrt(), scale))
}

/// Closed-form quantum determinant, product form without square roots.
pub fn qdet_scalar(params: &ModelParams, lambda: C64) -> C64 {
    let q = params.q();
    params.sites().iter().fold(one(), |acc, s| {
        acc * (-q) * s.beta * s.a * s.c / s.alpha
            * (1.0 / lambda + s.b * s.alpha / (q * s.a * s.beta) * lambda)
            * (1.0 / lambda + s.d * s.alpha / (q * s.c * s.beta) * lambda)
    })
}

/// prod_n k_n (l/mu+ - mu+/l)(l/mu- - mu-/l).
pub fn qdet_factorized(params: &ModelParams, lambda: C64) -> C64 {
    params.qdet_data().iter().fold(one(), |acc, d| {
        acc * d.k
            * (lambda / d.mu_plus - d.mu_plus / lambda)
            * (lambda / d.mu_minus - d.mu_minus / lambda)
    })
}

/// prod_n |k_n| (|l/mu+| + |mu+/l|)(|l/mu-| + |mu-/l|): the magnitude of the
/// factorized form before cancellation, used to normalize residuals near zeros.
pub fn qdet_scale(params: &ModelParams, lambda: C64) -> f64 {
    params
        .qdet_data()
        .iter()
        .map(|d| {
            d.k.norm()
                * ((lambda / d.mu_plus).norm() + (d.mu_plus / lambda).norm())
                * ((lambda / d.mu_minus).norm() + (d.mu_minus / lambda).norm())
        })
        .product()
}

pub fn qdet_poly(params: &ModelParams) -> LaurentPoly {
    params.qdet_data().iter().fold(LaurentPoly::constant(one()), |acc, d| {
        &acc * &LaurentPoly::from_sinh_roots(&[d.mu_plus, d.mu_minus]).scale(d.k)
    })
}

/// A(l) D(l/q) - B(l) C(l/q).
pub fn qdet_operator(params: &ModelParams, lambda: C64) -> Result<Mat> {
    let m = monodromy(params, lambda)?;
    let mq = monodromy(params, lambda / params.q())?;
    Ok(&m.a * &mq.d - &m.b * &mq.c)
}

/// L11(l) L22(l/q) - L12(l) L21(l/q) on one site.
pub fn local_qdet(params: &ModelParams, n: usize, lambda: C64) -> Mat {
    let l = lax_local(params, n, lambda);
    let lq = lax_local(params, n, lambda / params.q());
    &l[0][0] * &lq[1][1] - &l[0][1] * &lq[1][0]
}

/// Free data of a self-adjoint site.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelfAdjointFree {
    pub alpha: C64,
    pub a: C64,
    pub b: C64,
}

/// c = -eps b*, d = -eps a*, beta = eps a* b / alpha*, then gamma, delta derived.
pub fn make_selfadjoint(root: &UnityRoot, free: &[SelfAdjointFree], eps: i32) -> Result<ModelParams> {
    let e = eps as f64;
    let sites = free
        .iter()
        .map(|f| {
            let c = -f.b.conj() * e;
            let d = -f.a.conj() * e;
            let beta = f.a.conj() * f.b / f.alpha.conj() * e;
            SiteParams::derived(f.alpha, beta, f.a, f.b, c, d)
        })
        .collect();
    ModelParams::new(root.clone(), sites)
}

/// max over blocks of ||M(l)^dag_{ij} - (sigma M(l*) sigma)_{ij}|| / ||M||.
pub fn hermiticity_residual(params: &ModelParams, eps: i32, lambda: C64) -> Result<Residual> {
    let m = monodromy(params, lambda)?;
    let mc = monodromy(params, lambda.conj())?;
    let e = eps as f64;
    let pairs = [
        (&m.a, mc.d.clone()),
        (&m.b, &mc.c * C64::new(-e, 0.0)),
        (&m.c, &mc.b * C64::new(-e, 0.0)),
        (&m.d, mc.a.clone()),
    ];
    let raw = pairs.iter().map(|(x, y)| (x.adjoint() - y).norm_squared()).sum::<f64>().sqrt();
    Ok(Residual::new(raw, m.norm()))
}

/// Modulus-only quantum determinant of self-adjoint representations.
pub fn qdet_selfadjoint(params: &ModelParams, eps: i32, lambda: C64) -> C64 {
    let q = params.q();
    let e = eps as f64;
    params.sites().iter().fold(one(), |acc, s| {
        let (al, a, b) = (s.alpha.norm_sqr(), s.a.norm_sqr(), s.b.norm_sqr());
        acc * q * (a * b / al)
            * (1.0 / lambda + e / q * (al / a) * lambda)
            * (1.0 / lambda + e / q * (al / b) * lambda)
    })
}

/// Free data of the 4N-dimensional self-adjoint subvariety: moduli, the
/// phases theta_1..theta_{N-1} of alpha (theta_N closes the sum), the phase
/// of b_1, and per-site sign flips between a_n and b_n.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubvarietyFree {
    pub alpha_mod: Vec<f64>,
    pub a_mod: Vec<f64>,
    pub b_mod: Vec<f64>,
    pub theta: Vec<f64>,
    pub phi1: f64,
    pub flip: Vec<bool>,
}

impl SubvarietyFree {
    pub fn sample(rng: &mut ChaCha8Rng, n: usize) -> Self {
        let m = |rng: &mut ChaCha8Rng| rng.gen_range(0.5..2.0);
        SubvarietyFree {
            alpha_mod: (0..n).map(|_| m(rng)).collect(),
            a_mod: (0..n).map(|_| m(rng)).collect(),
            b_mod: (0..n).map(|_| m(rng)).collect(),
            theta: (0..n.saturating_sub(1)).map(|_| rng.gen_range(0.0..std::f64::consts::TAU)).collect(),
            phi1: rng.gen_range(0.0..std::f64::consts::TAU),
            flip: (0..n).map(|_| rng.gen_bool(0.5)).collect(),
        }
    }
}

/// Self-adjoint parameters on the subvariety prod alpha*/alpha = 1,
/// b/b* = a/a*, and the nearest-neighbour phase chain.
pub fn make_sadj_subvariety(root: &UnityRoot, free: &SubvarietyFree, eps: i32) -> Result<ModelParams> {
    let n = free.alpha_mod.len();
    if free.a_mod.len() != n || free.b_mod.len() != n || free.flip.len() != n {
        return Err(ModelError::PhaseChain("moduli lists differ in length".into()));
    }
    if free.theta.len() + 1 != n {
        return Err(ModelError::PhaseChain(format!("need {} alpha phases, got {}", n - 1, free.theta.len())));
    }
    let mut theta = free.theta.clone();
    theta.push(-free.theta.iter().sum::<f64>());
    let mut phi = vec![free.phi1];
    for i in 1..n {
        phi.push(phi[i - 1] + theta[i - 1] + theta[i]);
    }
    let sa: Vec<SelfAdjointFree> = (0..n)
        .map(|i| {
            let pa = if free.flip[i] { phi[i] + std::f64::consts::PI } else { phi[i] };
            SelfAdjointFree {
                alpha: C64::from_polar(free.alpha_mod[i], theta[i]),
                a: C64::from_polar(free.a_mod[i], pa),
                b: C64::from_polar(free.b_mod[i], phi[i]),
            }
        })
        .collect();
    make_selfadjoint(root, &sa, eps)
}

/// Largest residual of the three subvariety constraints.
pub fn subvariety_residual(params: &ModelParams) -> f64 {
    let s = params.sites();
    let n = s.len();
    let prod = s.iter().fold(one(), |acc, x| acc * x.alpha.conj() / x.alpha);
    let mut r = (prod - 1.0).norm();
    for i in 0..n {
        r = r.max((s[i].b / s[i].b.conj() - s[i].a / s[i].a.conj()).norm());
        let j = (i + 1) % n;
        let lhs = s[j].alpha.conj() * s[i].alpha.conj() / (s[j].alpha * s[i].alpha);
        let rhs = s[j].b.conj() * s[i].b / (s[j].b * s[i].b.conj());
        r = r.max((lhs - rhs).norm());
    }
    r
}

/// The gauge pair (a, d) with a(l) d(l/q) = det_q M(l):
/// a = prod (beta alpha)^{1/2}(l/mu+ - mu+/l), d = prod k/(beta alpha)^{1/2}(q l/mu- - mu-/(q l)).
pub fn gauge_coeffs(params: &ModelParams) -> (LaurentPoly, LaurentPoly) {
    let q = params.q();
    let mut a = LaurentPoly::constant(one());
    let mut d = LaurentPoly::constant(one());
    for (s, qd) in params.sites().iter().zip(params.qdet_data()) {
        let pre = (s.beta * s.alpha).sqrt();
        a = &a * &LaurentPoly::from_sinh_roots(&[qd.mu_plus]).scale(pre);
        d = &d * &LaurentPoly::from_sinh_roots(&[qd.mu_minus / q]).scale(qd.k / pre);
    }
    (a, d)
}

/// Baxter coefficients of the self-adjoint subvariety:
/// a(l) = (-1)^N prod (beta/l)(1 - s x |alpha|/|a| l)(1 - x |alpha|/|b| l), x = i^{(1+eps)/2} q^{-1/2},
/// d(l) = (-q)^N a(-l q), with s = +-1 the relative sign of a_n and b_n.
/// The signs make prod a + prod d reproduce the average trace; with i^N and
/// d = q^N a(-l q) that sum is even in Lambda and cannot match for odd N.
pub fn sadj_baxter_coeffs(params: &ModelParams, eps: i32) -> (LaurentPoly, LaurentPoly) {
    let root = params.root();
    let i = C64::new(0.0, 1.0);
    let x = if eps == 1 { i } else { one() } * root.half_pow(-1);
    let n = params.n() as i32;
    let sign = if n % 2 == 1 { -1.0 } else { 1.0 };
    let mut a = LaurentPoly::constant(C64::new(sign, 0.0));
    for s in params.sites() {
        let rel = if (s.a * s.b.conj()).re < 0.0 { -1.0 } else { 1.0 };
        let f1 = LaurentPoly::from_terms(&[(0, one()), (1, -x * rel * s.alpha.norm() / s.a.norm())]);
        let f2 = LaurentPoly::from_terms(&[(0, one()), (1, -x * s.alpha.norm() / s.b.norm())]);
        a = &(&a * &LaurentPoly::monomial(-1, s.beta)) * &(&f1 * &f2);
    }
    let d = a.dilate(-root.q).scale(root.pow(n as i64) * sign);
    (a, d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{commutator_residual, off_scalar};
    use proptest::prelude::*;
    use rand::SeedableRng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn root3() -> UnityRoot {
        UnityRoot::new(3, 2).unwrap()
    }

    fn unit_site() -> SiteParams {
        SiteParams::derived(one(), one(), one(), one(), one(), one())
    }

    #[test]
    fn lax_unit_entry() {
        let p = ModelParams::new(root3(), vec![unit_site()]).unwrap();
        let sp = p.space();
        let lam = C64::new(0.7, 0.3);
        let l = lax(&p, 1, lam).unwrap();
        let v = sp.site_v(1).unwrap();
        let expect = &v * lam - v.adjoint() / lam;
        assert!((&l[0][0] - expect).norm() < 1e-14);
        assert!(lax(&p, 1, zero()).is_err());
    }

    #[test]
    fn local_qdet_is_scalar_and_matches() {
        for seed in 0..3 {
            let p = sample_params(&root3(), 1, &mut rng(seed));
            let lam = C64::new(0.9, -0.4);
            let op = local_qdet(&p, 1, lam);
            let (s, dev) = off_scalar(&op);
            assert!(dev < 1e-12);
            let scal = qdet_scalar(&p, lam);
            assert!((s - scal).norm() < 1e-11 * scal.norm());
            assert!((qdet_factorized(&p, lam) - scal).norm() < 1e-11 * scal.norm());
            let mu = p.qdet_data()[0].mu_plus;
            assert!(qdet_factorized(&p, mu).norm() < 1e-12);
            assert!(qdet_scalar(&p, mu).norm() < 1e-12);
            let k = p.qdet_data()[0].k;
            let s0 = p.site(1);
            assert!((k * k - s0.a * s0.b * s0.c * s0.d).norm() < 1e-12);
        }
    }

    #[test]
    fn monodromy_single_site_is_lax() {
        let p = sample_params(&root3(), 1, &mut rng(3));
        let lam = C64::new(1.1, 0.2);
        let m = monodromy(&p, lam).unwrap();
        let l = lax(&p, 1, lam).unwrap();
        assert!((&m.a - &l[0][0]).norm() + (&m.b - &l[0][1]).norm() + (&m.c - &l[1][0]).norm() + (&m.d - &l[1][1]).norm() < 1e-13);
    }

    #[test]
    fn monodromy_matches_dense_product() {
        let p = sample_params(&root3(), 2, &mut rng(4));
        let lam = C64::new(0.6, 0.8);
        let m = monodromy(&p, lam).unwrap();
        let l1 = lax(&p, 1, lam).unwrap();
        let l2 = lax(&p, 2, lam).unwrap();
        let a = &l2[0][0] * &l1[0][0] + &l2[0][1] * &l1[1][0];
        let b = &l2[0][0] * &l1[0][1] + &l2[0][1] * &l1[1][1];
        assert!((a - &m.a).norm() < 1e-12 * m.norm());
        assert!((b - &m.b).norm() < 1e-12 * m.norm());
    }

    #[test]
    fn yang_baxter_and_negative_control() {
        let p = sample_params(&root3(), 2, &mut rng(5));
        let r = yang_baxter_residual(&p, C64::new(0.8, 0.5), C64::new(-1.3, 0.4)).unwrap();
        assert!(r.rel() < 1e-12, "{r:?}");
        let r1 = yang_baxter_residual(&p, C64::new(0.8, 0.5), C64::new(0.8, 0.5)).unwrap();
        assert!(r1.rel() < 1e-12);
        let mut sites = p.sites().to_vec();
        sites[0].gamma *= 1.5;
        let bad = ModelParams::new_unchecked(p.root().clone(), sites);
        let rb = yang_baxter_residual(&bad, C64::new(0.8, 0.5), C64::new(-1.3, 0.4)).unwrap();
        assert!(rb.rel() > 1e6 * r.rel().max(1e-16), "{rb:?}");
    }

    #[test]
    fn transfer_family_and_theta() {
        let p = sample_params(&root3(), 3, &mut rng(6));
        let t1 = transfer(&p, C64::new(0.7, 0.1)).unwrap();
        let t2 = transfer(&p, C64::new(-0.4, 1.2)).unwrap();
        assert!(commutator_residual(&t1, &t2).rel() < 1e-12);
        let th = p.space().theta();
        assert!(commutator_residual(&t1, &th).rel() < 1e-12);
        let m = monodromy(&p, C64::new(0.9, -0.6)).unwrap();
        let q = p.q();
        assert!((&th * &m.c - &m.c * &th * q).norm() < 1e-12 * m.c.norm());
        assert!((&m.b * &th - &th * &m.b * q).norm() < 1e-12 * m.b.norm());
        let mb = monodromy(&p, C64::new(1.3, 0.2)).unwrap();
        assert!(commutator_residual(&m.b, &mb.b).rel() < 1e-12);
    }

    #[test]
    fn asymptotics() {
        let p = sample_params(&root3(), 2, &mut rng(7));
        let th = p.space().theta();
        let big = C64::new(1e6, 0.0);
        let m = monodromy(&p, big).unwrap();
        let lead = &th * p.asymptotics().a_plus;
        assert!((&m.a / big.powi(2) - &lead).norm() < 1e-6 * lead.norm());
        let small = C64::new(1e-6, 0.0);
        let t = transfer(&p, small).unwrap() * small.powi(2);
        let thi = th.adjoint();
        let ex = &thi * p.asymptotics().a_minus + &th * p.asymptotics().d_minus;
        assert!((t - &ex).norm() < 1e-6 * ex.norm());
        assert!(p.derived_consistent());
    }

    #[test]
    fn qdet_operator_matches_scalar() {
        for n in 1..=3 {
            let p = sample_params(&root3(), n, &mut rng(10 + n as u64));
            let lam = C64::new(0.8, 0.45);
            let op = qdet_operator(&p, lam).unwrap();
            let s = qdet_scalar(&p, lam);
            let dev = (op - Mat::identity(p.space().dim, p.space().dim) * s).norm()
                / (s.norm() * (p.space().dim as f64).sqrt());
            assert!(dev < 1e-10, "n={n} dev={dev}");
        }
    }

    #[test]
    fn qdet_scale_bounds_the_scalar() {
        let p = sample_params(&root3(), 3, &mut rng(14));
        for lam in [C64::new(0.8, 0.45), C64::new(-1.3, 0.2), C64::new(0.1, -0.7)] {
            assert!(qdet_scalar(&p, lam).norm() <= qdet_scale(&p, lam) * (1.0 + 1e-12));
        }
        let mu = p.qdet_data()[0].mu_plus;
        assert!(qdet_scale(&p, mu) > 1e3 * qdet_scalar(&p, mu).norm());
    }

    #[test]
    fn qdet_gauge_invariant() {
        let p = sample_params(&root3(), 2, &mut rng(20));
        let lam = C64::new(0.8, 0.45);
        let m = monodromy(&p, lam).unwrap();
        let mq = monodromy(&p, lam / p.q()).unwrap();
        // constant 2x2 gauge G M G^{-1} with G = [[g1, g2],[g3, g4]]
        let g = [[C64::new(1.2, 0.3), C64::new(0.4, -0.1)], [C64::new(-0.2, 0.5), C64::new(0.9, 0.0)]];
        let det = g[0][0] * g[1][1] - g[0][1] * g[1][0];
        let gi = [[g[1][1] / det, -g[0][1] / det], [-g[1][0] / det, g[0][0] / det]];
        let conj = |m: &Monodromy| {
            let mut out = vec![vec![Mat::zeros(0, 0); 2]; 2];
            for i in 0..2 {
                for j in 0..2 {
                    let mut acc = Mat::zeros(m.a.nrows(), m.a.ncols());
                    for k in 0..2 {
                        for l in 0..2 {
                            acc += m.get(k, l) * (g[i][k] * gi[l][j]);
                        }
                    }
                    out[i][j] = acc;
                }
            }
            out
        };
        let x = conj(&m);
        let xq = conj(&mq);
        let op = &x[0][0] * &xq[1][1] - &x[0][1] * &xq[1][0];
        let s = qdet_scalar(&p, lam);
        let (v, dev) = off_scalar(&op);
        assert!(dev < 1e-10);
        assert!((v - s).norm() < 1e-10 * s.norm());
    }

    fn sadj_free(rng: &mut ChaCha8Rng, n: usize) -> Vec<SelfAdjointFree> {
        (0..n)
            .map(|_| SelfAdjointFree {
                alpha: random_complex(rng, 0.5, 2.0),
                a: random_complex(rng, 0.5, 2.0),
                b: random_complex(rng, 0.5, 2.0),
            })
            .collect()
    }

    #[test]
    fn selfadjoint_builder() {
        for eps in [1, -1] {
            let p = make_selfadjoint(&root3(), &sadj_free(&mut rng(30), 2), eps).unwrap();
            for lam in [C64::new(0.7, 0.2), C64::new(-1.1, 0.9), C64::new(1.4, -0.3)] {
                assert!(hermiticity_residual(&p, eps, lam).unwrap().rel() < 1e-12);
                let a = qdet_selfadjoint(&p, eps, lam);
                assert!((a - qdet_scalar(&p, lam)).norm() < 1e-12 * a.norm());
            }
            let t = transfer(&p, C64::new(0.83, 0.0)).unwrap();
            assert!((&t - t.adjoint()).norm() < 1e-12 * t.norm());
        }
        let real: Vec<_> = (0..2)
            .map(|i| SelfAdjointFree { alpha: C64::new(1.0 + i as f64, 0.0), a: C64::new(0.7, 0.0), b: C64::new(1.3, 0.0) })
            .collect();
        let p = make_selfadjoint(&root3(), &real, 1).unwrap();
        assert!(p.max_constraint_residual() < 1e-15);
    }

    #[test]
    fn subvariety_builder() {
        for eps in [1, -1] {
            for n in 1..=3 {
                let free = SubvarietyFree::sample(&mut rng(40 + n as u64), n);
                let p = make_sadj_subvariety(&root3(), &free, eps).unwrap();
                assert!(subvariety_residual(&p) < 1e-13);
                let a = p.asymptotics();
                assert!((a.a_plus - a.d_plus).norm() < 1e-12 * a.a_plus.norm());
                assert!((a.a_minus - a.d_minus).norm() < 1e-12 * a.a_minus.norm());
                let (ba, bd) = sadj_baxter_coeffs(&p, eps);
                for lam in [C64::new(0.7, 0.2), C64::new(-1.1, 0.9)] {
                    let lhs = ba.value(lam) * bd.value(lam / p.q());
                    let rhs = qdet_scalar(&p, lam);
                    assert!((lhs - rhs).norm() < 1e-12 * rhs.norm());
                }
                let tr = crate::averages::average_monodromy(&p).trace();
                for lam in [C64::new(0.8, 0.4), C64::new(-0.6, 1.2)] {
                    let orbit = |f: &LaurentPoly| (0..3).map(|j| f.value(lam * p.root().pow(j))).product::<C64>();
                    let expect = tr.value(lam.powi(3));
                    assert!((orbit(&ba) + orbit(&bd) - expect).norm() < 1e-11 * expect.norm());
                }
            }
        }
        let real = SubvarietyFree {
            alpha_mod: vec![1.0, 2.0],
            a_mod: vec![0.5, 0.7],
            b_mod: vec![1.5, 0.9],
            theta: vec![0.0],
            phi1: 0.0,
            flip: vec![false, false],
        };
        let p = make_sadj_subvariety(&root3(), &real, 1).unwrap();
        assert!(subvariety_residual(&p) < 1e-15);
    }

    #[test]
    fn gauge_coeffs_product() {
        let p = sample_params(&root3(), 3, &mut rng(50));
        let (a, d) = gauge_coeffs(&p);
        for lam in [C64::new(0.7, 0.2), C64::new(-1.1, 0.9)] {
            let lhs = a.value(lam) * d.value(lam / p.q());
            let rhs = qdet_scalar(&p, lam);
            assert!((lhs - rhs).norm() < 1e-12 * rhs.norm());
        }
        assert!(qdet_poly(&p).value(C64::new(0.3, 1.0)) == qdet_poly(&p).value(C64::new(0.3, 1.0)));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn yang_baxter_random(seed in 0u64..1000, lr in 0.5f64..2.0, la in 0.0f64..std::f64::consts::TAU, mr in 0.5f64..2.0, ma in 0.0f64..std::f64::consts::TAU) {
            let p = sample_params(&root3(), 2, &mut rng(seed));
            let r = yang_baxter_residual(&p, C64::from_polar(lr, la), C64::from_polar(mr, ma)).unwrap();
            prop_assert!(r.rel() < 1e-11);
        }

        #[test]
        fn theta_commutes_with_transfer(seed in 0u64..1000, lr in 0.5f64..2.0, la in 0.0f64..std::f64::consts::TAU) {
            let p = sample_params(&UnityRoot::new(5, 2).unwrap(), 2, &mut rng(seed));
            let t = transfer(&p, C64::from_polar(lr, la)).unwrap();
            prop_assert!(commutator_residual(&t, &p.space().theta()).rel() < 1e-11);
        }
    }
}
