//! Chiral Potts curve points, W-function Boltzmann weights, the
//! inhomogeneous chiral Potts transfer matrices and their relation to the
//! tau2 model as a Baxter Q-operator.

use num_complex::Complex64 as C64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::algebra::UnityRoot;
use crate::linalg::{one, Mat};
use crate::model::{transfer, ModelError, ModelParams, SiteParams};
use crate::weyl::Space;

/// Relative residual accepted for the three curve equations.
pub const CURVE_TOL: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ChpError {
    #[error("modulus k must avoid 0 and +-1")]
    Modulus,
    #[error("point off the curve (residual {0:.3e})")]
    OffCurve(f64),
    #[error("W-function cyclicity fails (residual {0:.3e})")]
    Cyclicity(f64),
    #[error("vanishing denominator in {0}")]
    Pole(&'static str),
    #[error("infeasible sign assignment: {0}")]
    Signs(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

pub type Result<T> = std::result::Result<T, ChpError>;

/// Homogeneous coordinates (a, b, c, d) of a point of C^4.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub a: C64,
    pub b: C64,
    pub c: C64,
    pub d: C64,
}

impl CurvePoint {
    pub fn x(&self) -> C64 {
        self.a / self.d
    }
    pub fn y(&self) -> C64 {
        self.b / self.c
    }
    pub fn s(&self) -> C64 {
        self.d / self.c
    }
    pub fn t(&self) -> C64 {
        self.x() * self.y()
    }

    /// Xi: (a, b, c, d) -> (q a, q b, c, d).
    pub fn xi(&self, root: &UnityRoot, power: i64) -> CurvePoint {
        let f = root.pow(power);
        CurvePoint { a: self.a * f, b: self.b * f, ..*self }
    }
}

/// The curve C_k, with k' fixed by a sign choice.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Curve {
    pub p: usize,
    pub k: C64,
    pub kp: C64,
}

impl Curve {
    /// k' is the principal square root of 1 - k^2, negated when `flip`.
    pub fn new(p: usize, k: C64, flip: bool) -> Result<Self> {
        if k.norm() < 1e-12 || (k - 1.0).norm() < 1e-12 || (k + 1.0).norm() < 1e-12 {
            return Err(ChpError::Modulus);
        }
        let kp = (one() - k * k).sqrt();
        Ok(Curve { p, k, kp: if flip { -kp } else { kp } })
    }

    /// Relative residuals of x^p + y^p = k(1 + x^p y^p), k x^p = 1 - k' s^-p, k y^p = 1 - k' s^p.
    pub fn residuals(&self, pt: &CurvePoint) -> [f64; 3] {
        let e = self.p as i32;
        let (xp, yp, sp) = (pt.x().powi(e), pt.y().powi(e), pt.s().powi(e));
        let r = |l: C64, r: C64| (l - r).norm() / l.norm().max(r.norm()).max(1.0);
        [
            r(xp + yp, self.k * (one() + xp * yp)),
            r(self.k * xp, one() - self.kp / sp),
            r(self.k * yp, one() - self.kp * sp),
        ]
    }

    pub fn residual(&self, pt: &CurvePoint) -> f64 {
        self.residuals(pt).iter().cloned().fold(0.0, f64::max)
    }

    /// Completes (a, d) to a curve point: s^p from the second equation, y^p
    /// from the third, principal p-th roots for s and y.
    pub fn solve(&self, a: C64, d: C64) -> Result<CurvePoint> {
        let e = self.p as i32;
        let xp = (a / d).powi(e);
        let den = one() - self.k * xp;
        if den.norm() < 1e-14 {
            return Err(ChpError::Pole("1 - k x^p"));
        }
        let sp = self.kp / den;
        let yp = (one() - self.kp * sp) / self.k;
        let inv = 1.0 / self.p as f64;
        let s = sp.powf(inv);
        let y = yp.powf(inv);
        let c = d / s;
        let pt = CurvePoint { a, b: y * c, c, d };
        let res = self.residual(&pt);
        if res > CURVE_TOL {
            return Err(ChpError::OffCurve(res));
        }
        Ok(pt)
    }

    /// A point with x y = t: x^p is the root of X^2 - k(1 + t^p) X + t^p = 0
    /// selected by `branch` (0 or 1), x its principal p-th root, y = t/x.
    pub fn point_with_t(&self, t: C64, branch: usize) -> Result<CurvePoint> {
        let e = self.p as i32;
        let tp = t.powi(e);
        let bq = self.k * (one() + tp);
        let disc = (bq * bq - tp * 4.0).sqrt();
        let roots = [(bq + disc) / 2.0, (bq - disc) / 2.0];
        let xp = roots[branch % 2];
        let den = one() - self.k * xp;
        if den.norm() < 1e-14 || xp.norm() < 1e-300 {
            return Err(ChpError::Pole("point_with_t"));
        }
        let x = xp.powf(1.0 / self.p as f64);
        let s = (self.kp / den).powf(1.0 / self.p as f64);
        let c = one() / s;
        let pt = CurvePoint { a: x, b: t / x * c, c, d: one() };
        let res = self.residual(&pt);
        if res > CURVE_TOL {
            return Err(ChpError::OffCurve(res));
        }
        Ok(pt)
    }
}

/// Solves (a, d) on C_k trying the principal k' first and then its negative.
pub fn curve_solve(p: usize, k: C64, a: C64, d: C64) -> Result<(Curve, CurvePoint)> {
    let mut last = ChpError::Modulus;
    for flip in [false, true] {
        let curve = Curve::new(p, k, flip)?;
        match curve.solve(a, d) {
            Ok(pt) => return Ok((curve, pt)),
            Err(e) => last = e,
        }
    }
    Err(last)
}

/// Tables W_qp(z(n))/W_qp(z(0)) and the barred analogue for n = 0..p-1,
/// z(n) = q^{-2n}, plus the n = p cyclicity defects.
#[derive(Clone, Debug)]
pub struct WPair {
    pub w: Vec<C64>,
    pub wbar: Vec<C64>,
    pub w_cyclicity: f64,
    pub wbar_cyclicity: f64,
}

impl WPair {
    /// W at z = q^{2k}, i.e. z(n) with n = -k mod p.
    pub fn w_at(&self, k: i64) -> C64 {
        let p = self.w.len() as i64;
        self.w[(-k).rem_euclid(p) as usize]
    }
    pub fn wbar_at(&self, k: i64) -> C64 {
        let p = self.wbar.len() as i64;
        self.wbar[(-k).rem_euclid(p) as usize]
    }
}

pub fn w_pair(root: &UnityRoot, q: &CurvePoint, pt: &CurvePoint) -> Result<WPair> {
    let p = root.p;
    let (xq, yq, sq) = (q.x(), q.y(), q.s());
    let (xp, yp, sp) = (pt.x(), pt.y(), pt.s());
    let mut w = vec![one()];
    let mut wb = vec![one()];
    for k in 1..=p {
        let qk = root.pow(-2 * k as i64);
        let dw = yq - qk * xp;
        let dwb = yp - qk * yq;
        if dw.norm() < 1e-300 || dwb.norm() < 1e-300 {
            return Err(ChpError::Pole("W recursion"));
        }
        let nw = w[k - 1] * sq / sp * (yp - qk * xq) / dw;
        let nwb = wb[k - 1] * sp * sq * (xq * root.pow(-2) - qk * xp) / dwb;
        w.push(nw);
        wb.push(nwb);
    }
    let w_cyc = (w[p] - one()).norm();
    let wb_cyc = (wb[p] - one()).norm();
    w.truncate(p);
    wb.truncate(p);
    Ok(WPair { w, wbar: wb, w_cyclicity: w_cyc, wbar_cyclicity: wb_cyc })
}

/// Requires both cyclicity defects below `tol`.
pub fn w_pair_cyclic(root: &UnityRoot, q: &CurvePoint, pt: &CurvePoint, tol: f64) -> Result<WPair> {
    let w = w_pair(root, q, pt)?;
    let worst = w.w_cyclicity.max(w.wbar_cyclicity);
    if worst > tol {
        return Err(ChpError::Cyclicity(worst));
    }
    Ok(w)
}

/// Modulus k, normalization c0 and the inhomogeneity points q_n, r_n.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChpConfig {
    pub curve: Curve,
    pub c0: C64,
    pub q_points: Vec<CurvePoint>,
    pub r_points: Vec<CurvePoint>,
}

impl ChpConfig {
    pub fn n(&self) -> usize {
        self.q_points.len()
    }

    pub fn homogeneous_pairs(&self) -> bool {
        self.q_points.iter().zip(&self.r_points).all(|(a, b)| a == b)
    }

    /// q_n = r_n = q_1 for every n. T commutes with itself and with tau2
    /// only in this case: with site-dependent q_n = r_n the commutators
    /// stay O(1).
    pub fn uniform(&self) -> bool {
        self.homogeneous_pairs() && self.q_points.iter().all(|x| *x == self.q_points[0])
    }

    /// The point p whose t_p^{-1/2} equals lambda/c0.
    pub fn spectral_point(&self, lambda: C64, branch: usize) -> Result<CurvePoint> {
        let t = (self.c0 / lambda).powi(2);
        self.curve.point_with_t(t, branch)
    }
}

/// tau2 parameters of the curve parametrization, with r (x_p/y_p)^{1/2} = 1:
/// alpha = -b_q b_r/c0, beta = -c0 d_q d_r, gamma = c0 c_q c_r,
/// delta = q^-2 a_q a_r/c0, a = -q^{-1/2} c_q b_r, b = q^{-3/2} a_q d_r,
/// c = q^{1/2} b_q c_r, d = -q^{-1/2} d_q a_r.
pub fn tau2_params_from_curve(root: &UnityRoot, cfg: &ChpConfig) -> Result<ModelParams> {
    let c0 = cfg.c0;
    let sites = cfg
        .q_points
        .iter()
        .zip(&cfg.r_points)
        .map(|(q, r)| SiteParams {
            alpha: -q.b * r.b / c0,
            beta: -c0 * q.d * r.d,
            gamma: c0 * q.c * r.c,
            delta: root.pow(-2) * q.a * r.a / c0,
            a: -root.half_pow(-1) * q.c * r.b,
            b: root.half_pow(-3) * q.a * r.d,
            c: root.half_pow(1) * q.b * r.c,
            d: -root.half_pow(-1) * q.d * r.a,
        })
        .collect();
    Ok(ModelParams::new(root.clone(), sites)?)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Which {
    T,
    THat,
}

/// Dense kernel on the u-eigenbasis. T: prod_n W_{q_n p}(z_n/z'_n) Wbar_{r_n p}(z_n/z'_{n+1});
/// THat: prod_n W_{q_n p}(z_{n+1}/z'_n) Wbar_{q_n p}(z_n/z'_n).
pub fn chp_transfer(root: &UnityRoot, cfg: &ChpConfig, pt: &CurvePoint, which: Which) -> Result<Mat> {
    let n = cfg.n();
    let sp = Space::new(root.clone(), n).map_err(ModelError::from)?;
    let wq: Vec<WPair> = cfg.q_points.iter().map(|q| w_pair(root, q, pt)).collect::<Result<_>>()?;
    let wr: Vec<WPair> = match which {
        Which::T => cfg.r_points.iter().map(|r| w_pair(root, r, pt)).collect::<Result<_>>()?,
        Which::THat => wq.clone(),
    };
    let dim = sp.dim;
    let rows: Vec<Vec<C64>> = (0..dim)
        .into_par_iter()
        .map(|i| {
            let z = sp.state(i);
            (0..dim)
                .map(|j| {
                    let zp = sp.state(j);
                    (0..n).fold(one(), |acc, s| {
                        let s1 = (s + 1) % n;
                        let (kz, kzp) = (z.digits[s] as i64, zp.digits[s] as i64);
                        match which {
                            Which::T => {
                                acc * wq[s].w_at(kz - kzp) * wr[s].wbar_at(kz - zp.digits[s1] as i64)
                            }
                            Which::THat => acc * wq[s].w_at(z.digits[s1] as i64 - kzp) * wq[s].wbar_at(kz - kzp),
                        }
                    })
                })
                .collect()
        })
        .collect();
    let mut m = Mat::zeros(dim, dim);
    for (i, row) in rows.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            m[(i, j)] = *v;
        }
    }
    Ok(m)
}

/// f_{p q_n r_n} = W_{q_n p}(z(l)) Wbar_{r_n p}(z(l)) (ratios to z(0)).
fn f_factor(root: &UnityRoot, q: &CurvePoint, r: &CurvePoint, pt: &CurvePoint) -> Result<C64> {
    let l = root.l;
    Ok(w_pair(root, q, pt)?.w[l] * w_pair(root, r, pt)?.wbar[l])
}

/// Baxter-equation coefficients of the chiral Potts transfer matrix at the
/// spectral point `pt` (lambda = c0 t_p^{-1/2}). The branch of
/// r = (y_p/x_p)^{1/2} is the one tied to lambda: r = y_p t_p^{-1/2} = y_p lambda/c0.
pub fn bs_coefficients(root: &UnityRoot, cfg: &ChpConfig, params: &ModelParams, lambda: C64, pt: &CurvePoint) -> Result<(C64, C64)> {
    let r = pt.y() * lambda / cfg.c0;
    let (q, qh) = (root.q, root.half_pow(1));
    let mut a = one();
    let mut d = one();
    for (n, s) in params.sites().iter().enumerate() {
        let f = f_factor(root, &cfg.q_points[n], &cfg.r_points[n], pt)?;
        let da = one() + lambda * s.alpha / (qh * r * s.c);
        let dd = one() - qh * r * lambda * s.alpha / s.a;
        if da.norm() < 1e-14 || dd.norm() < 1e-14 {
            return Err(ChpError::Pole("a_BS/d_BS"));
        }
        a *= -s.beta * f * (1.0 / lambda + s.alpha * s.d / (q * s.beta * s.c) * lambda) * (one() + qh * lambda * s.b / (s.beta * r)) / da;
        d *= -s.beta * f * (1.0 / lambda + q * s.alpha * s.b / (s.beta * s.a) * lambda) * (one() - lambda * s.d * r / (qh * s.beta)) / dd;
    }
    Ok((a, d))
}

/// ||tau2(l) T(p) - a_BS T(Xi p) - d_BS T(Xi^-1 p)|| / scale.
pub fn baxter_operator_residual(root: &UnityRoot, cfg: &ChpConfig, params: &ModelParams, lambda: C64, pt: &CurvePoint) -> Result<f64> {
    let t0 = chp_transfer(root, cfg, pt, Which::T)?;
    let tm = chp_transfer(root, cfg, &pt.xi(root, 1), Which::T)?;
    let tp = chp_transfer(root, cfg, &pt.xi(root, -1), Which::T)?;
    let tau = transfer(params, lambda)?;
    let (a, d) = bs_coefficients(root, cfg, params, lambda, pt)?;
    let lhs = &tau * &t0;
    let rhs = &tm * a + &tp * d;
    let scale = lhs.norm().max(rhs.norm()).max(f64::MIN_POSITIVE);
    Ok((lhs - rhs).norm() / scale)
}

/// Free data of one self-adjoint curve point: |x|, the solution branch of
/// the phase equation for x^p, the p-th root index of x, eps0 = +-1 and |d|.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SadjPointSpec {
    pub x_mod: f64,
    pub phase_branch: usize,
    pub root_index: usize,
    pub eps0: i32,
    pub d_mod: f64,
}

/// Curve with k* = eps k: k real for eps = 1, imaginary for eps = -1; k' > 0.
pub fn sadj_curve(p: usize, eps: i32, kappa: f64) -> Result<Curve> {
    let k = if eps == 1 { C64::new(kappa, 0.0) } else { C64::new(0.0, kappa) };
    Curve::new(p, k, false)
}

/// Phase of x^p solving x^p + eps x*^p = k(1 + eps |x|^{2p}).
fn sadj_phase(curve: &Curve, eps: i32, x_mod: f64, branch: usize) -> Result<f64> {
    let m = x_mod.powi(curve.p as i32);
    let v = if eps == 1 {
        curve.k.re * (1.0 + m * m) / (2.0 * m)
    } else {
        curve.k.im * (1.0 - m * m) / (2.0 * m)
    };
    if v.abs() > 1.0 {
        return Err(ChpError::Signs(format!("|x| = {x_mod} admits no phase on this curve")));
    }
    Ok(match (eps, branch % 2) {
        (1, 0) => v.acos(),
        (1, _) => -v.acos(),
        (_, 0) => v.asin(),
        (_, _) => std::f64::consts::PI - v.asin(),
    })
}

/// q = (a, eps q eps0 a*, eps0 d*, d) on the curve, with the phase of d
/// fixed by s^p = (1 - k y^p)/k'.
pub fn sadj_point(root: &UnityRoot, curve: &Curve, eps: i32, spec: &SadjPointSpec) -> Result<CurvePoint> {
    let p = curve.p as f64;
    let phi = sadj_phase(curve, eps, spec.x_mod, spec.phase_branch)?;
    let x = C64::from_polar(spec.x_mod, (phi + std::f64::consts::TAU * spec.root_index as f64) / p);
    let e = eps as f64;
    let e0 = spec.eps0 as f64;
    let yp = x.conj().powi(curve.p as i32) * e;
    let sp = (one() - curve.k * yp) / curve.kp;
    let psi = (sp * e0).arg() / (2.0 * p);
    let d = C64::from_polar(spec.d_mod, psi);
    let a = x * d;
    let pt = CurvePoint { a, b: root.q * a.conj() * e * e0, c: d.conj() * e0, d };
    let res = curve.residual(&pt);
    if res > CURVE_TOL {
        return Err(ChpError::OffCurve(res));
    }
    Ok(pt)
}

/// k from the curve equation of a self-adjoint point:
/// (phi^p + eps phi^-p)/(eps |x|^p + |x|^-p), phi the phase of x.
pub fn sadj_modulus(pt: &CurvePoint, p: usize, eps: i32) -> C64 {
    let x = pt.x();
    let e = p as i32;
    let ph = C64::from_polar(1.0, x.arg());
    let m = x.norm().powi(e);
    (ph.powi(e) + ph.powi(-e) * eps as f64) / (m * eps as f64 + 1.0 / m)
}

/// Spectral point with x_p* = eps q^-1 x_p, y_p* = eps q y_p, s_p real.
pub fn sadj_spectral_point(root: &UnityRoot, curve: &Curve, eps: i32, x_mod: f64, branch: usize) -> Result<CurvePoint> {
    let e = eps as f64;
    let pi = std::f64::consts::PI;
    // e^{-2 i theta} = eps q^-1
    let theta = -(C64::new(e, 0.0) / root.q).arg() / 2.0 + pi * (branch % 2) as f64;
    let x = C64::from_polar(x_mod, theta);
    let xp = x.powi(curve.p as i32);
    let yp = (curve.k - xp) / (one() - curve.k * xp);
    let sp = curve.kp / (one() - curve.k * xp);
    let pick = |target: C64, ok: &dyn Fn(C64) -> f64| {
        (0..curve.p)
            .map(|j| target.powf(1.0 / curve.p as f64) * root.pow(j as i64 * 2))
            .min_by(|u, v| ok(*u).partial_cmp(&ok(*v)).unwrap())
            .unwrap()
    };
    let y = pick(yp, &|y: C64| (y.conj() - root.q * y * e).norm());
    let s = pick(sp, &|s: C64| s.im.abs());
    let pt = CurvePoint { a: x, b: y / s, c: one() / s, d: one() };
    let res = curve.residual(&pt);
    if res > CURVE_TOL {
        return Err(ChpError::OffCurve(res));
    }
    Ok(pt)
}

/// Normality data: T^dag against g THat (g by least squares) and the
/// commutator of T with T^dag.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct NormalityReport {
    pub g: C64,
    pub conjugation: f64,
    pub normality: f64,
}

pub fn normality_check(root: &UnityRoot, cfg: &ChpConfig, pt: &CurvePoint) -> Result<NormalityReport> {
    let t = chp_transfer(root, cfg, pt, Which::T)?;
    let th = chp_transfer(root, cfg, pt, Which::THat)?;
    let td = t.adjoint();
    let g = th.iter().zip(td.iter()).fold(C64::new(0.0, 0.0), |acc, (h, d)| acc + h.conj() * d) / th.norm_squared();
    let conjugation = (&td - &th * g).norm() / td.norm();
    let normality = (&t * &td - &td * &t).norm() / (t.norm() * t.norm());
    Ok(NormalityReport { g, conjugation, normality })
}

/// q-orbit products of the Baxter coefficients: prod_k a_BS(l q^-k) and
/// prod_k d_BS(l q^-k), with the point moved along by Xi^k.
pub fn bs_orbit_products(root: &UnityRoot, cfg: &ChpConfig, params: &ModelParams, lambda: C64, pt: &CurvePoint) -> Result<(C64, C64)> {
    (0..root.p as i64).try_fold((one(), one()), |(pa, pd), k| {
        let (a, d) = bs_coefficients(root, cfg, params, lambda * root.pow(-k), &pt.xi(root, k))?;
        Ok((pa * a, pd * d))
    })
}

/// Per joint eigenline of (tau2, Theta): how well it diagonalizes T at the
/// sampled points, and the eigenvalue relation
/// t(l) = (a_BS q_{l/q} + d_BS q_{ql})/q_l.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EigenMapReport {
    pub leakage: f64,
    pub relation: f64,
    /// Smallest distance between the T-eigenvalue vectors of two lines over
    /// all samples; the map to t is one-to-one when this stays away from 0.
    pub separation: f64,
    pub t_separation: f64,
}

pub fn eigenvalue_map(
    root: &UnityRoot,
    cfg: &ChpConfig,
    params: &ModelParams,
    lines: &[crate::spectrum::SpectralLine],
    lambdas: &[C64],
) -> Result<EigenMapReport> {
    let mut leakage = 0.0f64;
    let mut relation = 0.0f64;
    let mut qvals: Vec<Vec<C64>> = vec![Vec::new(); lines.len()];
    let mut tvals: Vec<Vec<C64>> = vec![Vec::new(); lines.len()];
    for &lam in lambdas {
        let pt = cfg.spectral_point(lam, 0)?;
        let ts: Vec<Mat> = [0i64, 1, -1]
            .iter()
            .map(|&j| chp_transfer(root, cfg, &pt.xi(root, j), Which::T))
            .collect::<Result<_>>()?;
        let (a, d) = bs_coefficients(root, cfg, params, lam, &pt)?;
        for (i, line) in lines.iter().enumerate() {
            let ev: Vec<C64> = ts
                .iter()
                .map(|t| {
                    let tv = t * &line.eigvec;
                    let e = (line.dual.transpose() * &tv)[(0, 0)];
                    leakage = leakage.max((tv - &line.eigvec * e).norm() / t.norm());
                    e
                })
                .collect();
            let pred = (a * ev[1] + d * ev[2]) / ev[0];
            let t = line.t.value(lam);
            relation = relation.max((pred - t).norm() / t.norm().max(pred.norm()));
            qvals[i].extend(ev);
            tvals[i].push(t);
        }
    }
    let min_pair = |v: &[Vec<C64>]| {
        let mut best = f64::INFINITY;
        for i in 0..v.len() {
            for j in 0..i {
                let num: f64 = v[i].iter().zip(&v[j]).map(|(x, y)| (x - y).norm_sqr()).sum::<f64>().sqrt();
                let den: f64 = v[i].iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
                best = best.min(num / den);
            }
        }
        best
    };
    Ok(EigenMapReport { leakage, relation, separation: min_pair(&qvals), t_separation: min_pair(&tvals) })
}

/// ||[Theta, T]|| / (||Theta|| ||T||).
pub fn theta_commutator(root: &UnityRoot, cfg: &ChpConfig, pt: &CurvePoint) -> Result<f64> {
    let t = chp_transfer(root, cfg, pt, Which::T)?;
    let sp = Space::new(root.clone(), cfg.n()).map_err(ModelError::from)?;
    Ok(crate::linalg::commutator_residual(&sp.theta(), &t).rel())
}

/// Free data of a homogeneous self-adjoint configuration (q_n = r_n = q)
/// whose tau2 image lies in the polynomial-Q subvariety: the phase of a_q,
/// the signs eps1 (d/d* = eps1 q^2 a*/a) and eps2 (closure of
/// q^2 a*/a = eps2 a/(q^2 a*)), the chain length and |d|.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RbarSpec {
    pub eps: i32,
    pub n: usize,
    pub phi_a: f64,
    pub eps1: i32,
    pub eps2: i32,
    pub d_mod: f64,
}

fn sign(e: i32) -> f64 {
    if e < 0 {
        -1.0
    } else {
        1.0
    }
}

/// Once the phases of a and d are fixed, the curve equations leave no
/// freedom in |x| or k: with Phi = arg x^p, 1 - k x^p is proportional to
/// 1 - |x|^{2p} e^{2i Phi} and its phase must be -2p arg d (mod pi), so
/// |x|^{2p} = -sin(theta)/sin(2 Phi - theta), theta = -2p arg d, and
/// k = 2|x|^p cos(Phi)/(1 + |x|^{2p}) (eps = 1) or
/// k = 2i |x|^p sin(Phi)/(1 - |x|^{2p}) (eps = -1).
pub fn rbar_subvariety(root: &UnityRoot, spec: &RbarSpec) -> Result<ChpConfig> {
    if spec.n == 0 {
        return Err(ChpError::Signs("empty chain".into()));
    }
    let q2 = root.q * root.q;
    let phase = |t: f64| C64::from_polar(1.0, t);
    if (phase(4.0 * spec.phi_a) - q2 * q2 * sign(spec.eps2)).norm() > 1e-12 {
        return Err(ChpError::Signs("phase of a does not close: need a^2/a*^2 = eps2 q^4".into()));
    }
    if spec.n % 2 == 1 && spec.eps2 < 0 {
        return Err(ChpError::Signs("odd N requires phi^2 = +-q^2 for the phase of a".into()));
    }
    let p = root.p as f64;
    let psi = (q2 * sign(spec.eps1)).arg() / 2.0 - spec.phi_a;
    let big_phi = p * (spec.phi_a - psi);
    let theta = -2.0 * p * psi;
    let den = (2.0 * big_phi - theta).sin();
    let u = -theta.sin() / den;
    if !(u.is_finite() && u > 0.0 && (u - 1.0).abs() > 1e-12) {
        return Err(ChpError::Signs(format!("no curve modulus for these phases (|x|^2p = {u:.3e})")));
    }
    let m = u.sqrt();
    let k = if spec.eps == 1 {
        C64::new(2.0 * m * big_phi.cos() / (1.0 + u), 0.0)
    } else {
        C64::new(0.0, 2.0 * m * big_phi.sin() / (1.0 - u))
    };
    let curve = Curve::new(root.p, k, false)?;
    let sp = curve.kp / (one() - curve.k * phase(big_phi) * m);
    let e0 = if (sp * phase(-2.0 * p * psi)).re < 0.0 { -1.0 } else { 1.0 };
    let d = C64::from_polar(spec.d_mod, psi);
    let a = C64::from_polar(spec.d_mod * m.powf(1.0 / p), spec.phi_a);
    let pt = CurvePoint { a, b: root.q * a.conj() * sign(spec.eps) * e0, c: d.conj() * e0, d };
    let res = curve.residual(&pt);
    if res > CURVE_TOL {
        return Err(ChpError::OffCurve(res));
    }
    Ok(ChpConfig { curve, c0: one(), q_points: vec![pt; spec.n], r_points: vec![pt; spec.n] })
}

/// Closed form of prod_orbit a / prod_orbit d for the subvariety Baxter
/// pair of a (-eps)-self-adjoint tau2 chain:
/// prod_n (1 - s_n c r_a^p L)(1 - c r_b^p L) / ((1 + s_n c r_a^p L)(1 + c r_b^p L))
/// with c = x^p, x = i^{(1-eps)/2} q^{-1/2}, r_a = |alpha/a|, r_b = |alpha/b|.
pub fn rbar_average_ratio(params: &ModelParams, tau_eps: i32, big: C64) -> C64 {
    let root = params.root();
    let x = if tau_eps == 1 { C64::new(0.0, 1.0) } else { one() } * root.half_pow(-1);
    let c = x.powi(root.p as i32);
    let e = root.p as i32;
    params.sites().iter().fold(one(), |acc, s| {
        let rel = if (s.a * s.b.conj()).re < 0.0 { -1.0 } else { 1.0 };
        let ra = c * (s.alpha.norm() / s.a.norm()).powi(e) * rel * big;
        let rb = c * (s.alpha.norm() / s.b.norm()).powi(e) * big;
        acc * (one() - ra) * (one() - rb) / ((one() + ra) * (one() + rb))
    })
}

/// Max relative defect of
/// W(zq)/W(z/q) = -z (s_p/s_q)(x_p/y_p) q^-1 (1 - (y_q/x_p) q/z)/(1 - (x_q/y_p) z/q)
/// and of its barred analogue over z in S_p.
pub fn w_recursion_residual(root: &UnityRoot, q: &CurvePoint, pt: &CurvePoint) -> Result<f64> {
    let w = w_pair(root, q, pt)?;
    let p = root.p;
    let l = root.l;
    let (xq, yq, sq) = (q.x(), q.y(), q.s());
    let (xp, yp, sp) = (pt.x(), pt.y(), pt.s());
    let qq = root.q;
    let rel = |a: C64, b: C64| (a - b).norm() / a.norm().max(b.norm());
    let mut worst = 0.0f64;
    for n in 0..p {
        // z = z(n); zq = z(n + l), z/q = z(n + l + 1)
        let z = root.pow(-2 * n as i64);
        let (up, dn) = ((n + l) % p, (n + l + 1) % p);
        let lw = w.w[up] / w.w[dn];
        let rw = -z * sp / sq * xp / yp / qq * (one() - yq / xp * qq / z) / (one() - xq / yp * z / qq);
        let lb = w.wbar[up] / w.wbar[dn];
        let rb = -(qq / z) / (sp * sq) * yp / xp * (one() - yq / yp * z / qq) / (one() - xq / xp / (qq * z));
        worst = worst.max(rel(lw, rw)).max(rel(lb, rb));
    }
    Ok(worst)
}

/// Max over n of |W(z(n))* - Wbar(z(p - n))| for normalized tables.
pub fn w_conjugation_residual(root: &UnityRoot, q: &CurvePoint, pt: &CurvePoint) -> Result<f64> {
    let w = w_pair(root, q, pt)?;
    let p = root.p;
    Ok((0..p).map(|n| (w.w[n].conj() - w.wbar[(p - n) % p]).norm() / w.w[n].norm()).fold(0.0, f64::max))
}

/// Defects of the inverted parametrization at lambda, with r = y_p lambda/c0:
/// x_q/y_p = -q^{3/2} l b/(beta r), x_r/x_p = q^{1/2} l d r/beta,
/// y_q/x_p = q^{-1/2} r l alpha/a, y_r/y_p = -q^{1/2} l alpha/(r c),
/// s_q s_r = -alpha beta/(c a).
pub fn inversion_residual(root: &UnityRoot, cfg: &ChpConfig, params: &ModelParams, lambda: C64, pt: &CurvePoint) -> f64 {
    let r = pt.y() * lambda / cfg.c0;
    let (q, qh) = (root.q, root.half_pow(1));
    let rel = |a: C64, b: C64| (a - b).norm() / a.norm().max(b.norm());
    params
        .sites()
        .iter()
        .zip(cfg.q_points.iter().zip(&cfg.r_points))
        .map(|(s, (pq, pr))| {
            [
                rel(pq.x() / pt.y(), -q * qh * lambda * s.b / (s.beta * r)),
                rel(pr.x() / pt.x(), qh * lambda * s.d * r / s.beta),
                rel(pq.y() / pt.x(), r * lambda * s.alpha / (qh * s.a)),
                rel(pr.y() / pt.y(), -qh * lambda * s.alpha / (r * s.c)),
                rel(pq.s() * pr.s(), -s.alpha * s.beta / (s.c * s.a)),
            ]
            .into_iter()
            .fold(0.0, f64::max)
        })
        .fold(0.0, f64::max)
}

/// Completeness data on a polynomial-Q configuration: every joint eigenline
/// carries an eps-real Q with eps-self-adjoint Bethe roots, and the labels
/// (k, a_t, b_t, roots) and the T-eigenvalue functions are pairwise distinct.
/// The Theta charge k is part of the label: states in sectors k and p - k
/// can share t and Q.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompletenessReport {
    pub states: usize,
    pub expected: usize,
    pub max_residual: f64,
    pub eps_self_adjoint: bool,
    pub distinct_bethe: bool,
    pub eigen_map: EigenMapReport,
    /// |prod a/prod d - 1| at the sampled Lambda.
    pub average_ratio_margin: f64,
}

pub fn bethe_completeness(root: &UnityRoot, cfg: &ChpConfig, chp_eps: i32, lambdas: &[C64]) -> std::result::Result<CompletenessReport, String> {
    use crate::spectrum::{attach_baxter, joint_diagonalize};
    let params = tau2_params_from_curve(root, cfg).map_err(|e| e.to_string())?;
    let tau_eps = -chp_eps;
    let mut lines = joint_diagonalize(&params).map_err(|e| e.to_string())?;
    attach_baxter(&params, &mut lines, tau_eps).map_err(|e| e.to_string())?;
    let keys = ["baxter", "bethe", "t_reconstruction", "cofactor_agreement"];
    let mut max_residual = 0.0f64;
    let mut eps_self_adjoint = true;
    for l in &lines {
        for k in keys {
            max_residual = max_residual.max(l.residual(k).unwrap_or(f64::INFINITY));
        }
        eps_self_adjoint &= l.residual("eps_self_adjoint") == Some(0.0) && l.residual("congruence") == Some(0.0);
    }
    let label = |l: &crate::spectrum::SpectralLine| {
        let mut r = l.bethe_roots.clone();
        r.sort_by(|a, b| a.re.partial_cmp(&b.re).unwrap().then(a.im.partial_cmp(&b.im).unwrap()));
        (l.k, l.a_t, l.b_t, r)
    };
    let labels: Vec<_> = lines.iter().map(label).collect();
    let mut distinct_bethe = true;
    for i in 0..labels.len() {
        for j in 0..i {
            let (a, b) = (&labels[i], &labels[j]);
            let same = a.0 == b.0 && a.1 == b.1 && a.2 == b.2 && a.3.len() == b.3.len() && a.3.iter().zip(&b.3).all(|(x, y)| (x - y).norm() < 1e-6);
            distinct_bethe &= !same;
        }
    }
    let eigen_map = eigenvalue_map(root, cfg, &params, &lines, lambdas).map_err(|e| e.to_string())?;
    let big = lambdas.first().copied().unwrap_or(one()).powi(root.p as i32);
    Ok(CompletenessReport {
        states: lines.len(),
        expected: root.p.pow(cfg.n() as u32),
        max_residual: max_residual.max(eigen_map.relation),
        eps_self_adjoint,
        distinct_bethe,
        eigen_map,
        average_ratio_margin: (rbar_average_ratio(&params, tau_eps, big) - 1.0).norm(),
    })
}
