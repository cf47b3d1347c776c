//! Average values O(Lambda) = prod_{k=1}^p O(q^k lambda), Lambda = lambda^p,
//! of the monodromy entries. They are computed as the product of 2x2
//! average Lax matrices and checked against the p-fold operator product.

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::algebra::{LaurentPoly, Parity};
use crate::linalg::{one, zero, Mat};
use crate::model::{monodromy, ModelError, ModelParams};

pub const CENTRALITY_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AverageError {
    #[error("{tag:?} average is not central (deviation {deviation:.3e})")]
    NotCentral { tag: Generator, deviation: f64 },
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Generator {
    A,
    B,
    C,
    D,
}

pub const GENERATORS: [Generator; 4] = [Generator::A, Generator::B, Generator::C, Generator::D];

/// The 2x2 matrix of averages, entries Laurent polynomials in Lambda.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AverageMatrix {
    pub a: LaurentPoly,
    pub b: LaurentPoly,
    pub c: LaurentPoly,
    pub d: LaurentPoly,
}

impl AverageMatrix {
    pub fn get(&self, g: Generator) -> &LaurentPoly {
        match g {
            Generator::A => &self.a,
            Generator::B => &self.b,
            Generator::C => &self.c,
            Generator::D => &self.d,
        }
    }

    pub fn det(&self) -> LaurentPoly {
        &(&self.a * &self.d) - &(&self.b * &self.c)
    }

    pub fn trace(&self) -> LaurentPoly {
        &self.a + &self.d
    }

    fn mul(&self, o: &AverageMatrix) -> AverageMatrix {
        AverageMatrix {
            a: &(&self.a * &o.a) + &(&self.b * &o.c),
            b: &(&self.a * &o.b) + &(&self.b * &o.d),
            c: &(&self.c * &o.a) + &(&self.d * &o.c),
            d: &(&self.c * &o.b) + &(&self.d * &o.d),
        }
    }

    pub fn eval(&self, lam: C64) -> [[C64; 2]; 2] {
        [[self.a.value(lam), self.b.value(lam)], [self.c.value(lam), self.d.value(lam)]]
    }
}

/// Average Lax matrix of site n (1-based).
pub fn average_lax(params: &ModelParams, n: usize) -> AverageMatrix {
    let p = params.p();
    let s = params.site(n).powp(p);
    let qp2 = params.root().half_pow(p as i64);
    AverageMatrix {
        a: LaurentPoly::from_terms(&[(1, s.alpha), (-1, -s.beta)]),
        b: LaurentPoly::constant(qp2 * (s.a + s.b)),
        c: LaurentPoly::constant(qp2 * (s.c + s.d)),
        d: LaurentPoly::from_terms(&[(-1, s.gamma), (1, -s.delta)]),
    }
}

/// L_N(Lambda) ... L_1(Lambda).
pub fn average_monodromy(params: &ModelParams) -> AverageMatrix {
    let n = params.n();
    let mut m = average_lax(params, 1);
    for k in 2..=n {
        m = average_lax(params, k).mul(&m);
    }
    let par = Parity::of(n);
    let opp = Parity::of(n + 1);
    AverageMatrix {
        a: m.a.with_parity(par),
        b: m.b.with_parity(opp),
        c: m.c.with_parity(opp),
        d: m.d.with_parity(par),
    }
}

/// lambda = Lambda^{1/p} on the principal branch.
pub fn lambda_of(big: C64, p: usize) -> C64 {
    big.powf(1.0 / p as f64)
}

/// p-fold operator product over the q-orbit of the principal p-th root.
pub fn operator_average_matrix(params: &ModelParams, g: Generator, big: C64) -> Result<Mat, AverageError> {
    Ok(average_with_scale(params, g, big)?.0)
}

/// The product together with the Frobenius norm it would have without
/// cancellations, prod_k ||X(q^k l)|| / dim^{(p-1)/2}. Deviations are measured
/// against this scale, which stays meaningful when the average vanishes.
pub fn average_with_scale(params: &ModelParams, g: Generator, big: C64) -> Result<(Mat, f64), AverageError> {
    let lam = lambda_of(big, params.p());
    let dim = params.space().dim;
    let mut acc = Mat::identity(dim, dim);
    let mut scale = (dim as f64).sqrt();
    for k in 1..=params.p() {
        let m = monodromy(params, params.root().pow(k as i64) * lam)?;
        let op = match g {
            Generator::A => m.a,
            Generator::B => m.b,
            Generator::C => m.c,
            Generator::D => m.d,
        };
        scale *= op.norm() / (dim as f64).sqrt();
        acc = op * acc;
    }
    Ok((acc, scale))
}

/// Scalar part of the average and its deviation from a multiple of the
/// identity, relative to the cancellation-free scale.
pub fn centrality_deviation(params: &ModelParams, g: Generator, big: C64) -> Result<(C64, f64, f64), AverageError> {
    let (m, scale) = average_with_scale(params, g, big)?;
    let n = m.nrows();
    let s = m.trace() / n as f64;
    let dev = (&m - Mat::identity(n, n) * s).norm();
    let sc = m.norm().max(scale);
    Ok((s, if sc > 0.0 { dev / sc } else { 0.0 }, scale / (n as f64).sqrt()))
}

/// Scalar value of the average, after asserting centrality.
pub fn operator_average(params: &ModelParams, g: Generator, big: C64) -> Result<C64, AverageError> {
    let (s, dev, _) = centrality_deviation(params, g, big)?;
    if !(dev < CENTRALITY_TOL) {
        return Err(AverageError::NotCentral { tag: g, deviation: dev });
    }
    Ok(s)
}

/// prod_{i=1}^p det_q M(q^i lambda) = prod_n k_n^p (L/M+ - M+/L)(L/M- - M-/L), M = mu^p.
pub fn qdet_average_poly(params: &ModelParams) -> LaurentPoly {
    let p = params.p() as i32;
    params.qdet_data().iter().fold(LaurentPoly::constant(one()), |acc, d| {
        &acc * &LaurentPoly::from_sinh_roots(&[d.mu_plus.powi(p), d.mu_minus.powi(p)]).scale(d.k.powi(p))
    })
}

/// Eigenvalues of M(Lambda); Omega_+ is the one closer to A(Lambda), ties by argument.
pub fn omega_eigenvalues(avg: &AverageMatrix, big: C64) -> (C64, C64) {
    let m = avg.eval(big);
    let tr = m[0][0] + m[1][1];
    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    let disc = (tr * tr / 4.0 - det).sqrt();
    let e1 = tr / 2.0 + disc;
    let e2 = tr / 2.0 - disc;
    let d1 = (e1 - m[0][0]).norm();
    let d2 = (e2 - m[0][0]).norm();
    if d1 < d2 || (d1 == d2 && e1.arg() >= e2.arg()) {
        (e1, e2)
    } else {
        (e2, e1)
    }
}

/// Scalar deviation of a 2x2 evaluation from the operator averages.
pub fn product_formula_residual(params: &ModelParams, avg: &AverageMatrix, big: C64) -> Result<f64, AverageError> {
    let mut worst = 0.0f64;
    for g in GENERATORS {
        let (op, dev, unit) = centrality_deviation(params, g, big)?;
        if !(dev < CENTRALITY_TOL) {
            return Err(AverageError::NotCentral { tag: g, deviation: dev });
        }
        let sym = avg.get(g).value(big);
        let scale = op.norm().max(sym.norm()).max(unit).max(1e-300);
        worst = worst.max((op - sym).norm() / scale);
    }
    Ok(worst)
}

pub fn zero_poly() -> LaurentPoly {
    LaurentPoly::constant(zero())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::off_scalar;
    use crate::algebra::{circle_grid, UnityRoot};
    use crate::model::{make_selfadjoint, sample_params, SelfAdjointFree, SiteParams};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn root3() -> UnityRoot {
        UnityRoot::new(3, 2).unwrap()
    }

    #[test]
    fn single_site_a_average() {
        let p = sample_params(&root3(), 1, &mut ChaCha8Rng::seed_from_u64(1));
        let s = p.site(1);
        let big = C64::new(1.3, 0.4);
        let v = operator_average(&p, Generator::A, big).unwrap();
        let expect = big * s.alpha.powi(3) - s.beta.powi(3) / big;
        assert!((v - expect).norm() < 1e-10 * expect.norm());
        let avg = average_monodromy(&p);
        assert_eq!(avg.a, average_lax(&p, 1).a.with_parity(Parity::Odd));
    }

    #[test]
    fn product_formula_and_centrality() {
        for (n, p) in [(2usize, 3usize), (3, 3), (2, 5)] {
            let root = UnityRoot::new(p, 2).unwrap();
            let params = sample_params(&root, n, &mut ChaCha8Rng::seed_from_u64(10 + n as u64));
            let avg = average_monodromy(&params);
            for big in circle_grid(7, 1.17) {
                let r = product_formula_residual(&params, &avg, big).unwrap();
                assert!(r < 1e-9, "n={n} p={p} r={r}");
            }
            assert_eq!(avg.a.parity_leak(Parity::of(n)), 0.0);
            assert!(avg.a.degree() == n && avg.b.degree() < n);
        }
    }

    #[test]
    fn det_contract() {
        let params = sample_params(&root3(), 3, &mut ChaCha8Rng::seed_from_u64(2));
        let avg = average_monodromy(&params);
        let det = avg.det();
        let target = qdet_average_poly(&params);
        assert!(det.coeff_distance(&target) < 1e-8 * target.max_abs());
        // direct sampling of the q-orbit product of the scalar quantum determinant
        for big in circle_grid(5, 0.9) {
            let lam = lambda_of(big, 3);
            let prod: C64 = (1..=3).map(|i| crate::model::qdet_scalar(&params, params.root().pow(i) * lam)).product();
            assert!((prod - target.value(big)).norm() < 1e-10 * prod.norm());
        }
    }

    #[test]
    fn omega_ordering() {
        let params = sample_params(&root3(), 2, &mut ChaCha8Rng::seed_from_u64(3));
        let avg = average_monodromy(&params);
        let big = C64::new(0.7, 0.2);
        let (wp, wm) = omega_eigenvalues(&avg, big);
        let det = avg.det().value(big);
        let tr = avg.trace().value(big);
        assert!((wp * wm - det).norm() < 1e-10 * det.norm());
        assert!((wp + wm - tr).norm() < 1e-10 * tr.norm().max(1.0));
        assert!((wp - wm).norm() > 1e-6);
    }

    #[test]
    fn restricted_params_diagonal() {
        let root = root3();
        let w = C64::from_polar(1.0, std::f64::consts::PI / 3.0);
        let sites: Vec<SiteParams> = (0..3)
            .map(|i| {
                let a = C64::new(0.8 + 0.1 * i as f64, 0.3);
                let d = C64::new(1.1, -0.2 * i as f64);
                SiteParams::derived(C64::new(1.2, 0.1), C64::new(0.7, 0.5), a, a * w, d * w, d)
            })
            .collect();
        let params = ModelParams::new(root, sites).unwrap();
        let avg = average_monodromy(&params);
        assert!(avg.b.max_abs() < 1e-12 && avg.c.max_abs() < 1e-12);
        let big = C64::new(0.6, 0.9);
        let (wp, wm) = omega_eigenvalues(&avg, big);
        assert!((wp - avg.a.value(big)).norm() < 1e-12);
        assert!((wm - avg.d.value(big)).norm() < 1e-12);
    }

    #[test]
    fn selfadjoint_conjugation() {
        for eps in [1, -1] {
            let mut rng = ChaCha8Rng::seed_from_u64(4);
            let free: Vec<SelfAdjointFree> = (0..2)
                .map(|_| {
                    let s = crate::model::sample_sites(&mut rng, 1, 0.5, 2.0)[0];
                    SelfAdjointFree { alpha: s.alpha, a: s.a, b: s.b }
                })
                .collect();
            let params = make_selfadjoint(&root3(), &free, eps).unwrap();
            let avg = average_monodromy(&params);
            let big = C64::new(0.4, 1.1);
            assert!((avg.a.value(big).conj() - avg.d.value(big.conj())).norm() < 1e-12 * avg.a.max_abs());
            assert!((avg.b.value(big).conj() + avg.c.value(big.conj()) * eps as f64).norm() < 1e-12 * avg.b.max_abs());
        }
    }

    #[test]
    fn similarity_invariance() {
        // averages of S O S^{-1} for a diagonal S on the quantum space
        let params = sample_params(&root3(), 2, &mut ChaCha8Rng::seed_from_u64(5));
        let dim = params.space().dim;
        let s = Mat::from_fn(dim, dim, |i, j| if i == j { C64::from_polar(0.5 + i as f64 * 0.1, i as f64) } else { zero() });
        let si = s.clone().try_inverse().unwrap();
        let big = C64::new(0.9, 0.3);
        for g in GENERATORS {
            let m = operator_average_matrix(&params, g, big).unwrap();
            let conj = &s * &m * &si;
            let (v0, _) = off_scalar(&m);
            let (v1, dev) = off_scalar(&conj);
            assert!(dev < 1e-9 && (v0 - v1).norm() < 1e-9 * v0.norm().max(1.0));
        }
    }
}
