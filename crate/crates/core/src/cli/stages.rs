use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{registry, Bound, CheckRecord, Mode, RunConfig, Sites, SpectrumRow, Stage, StageOutput};
use crate::algebra::{circle_grid, LaurentPoly, UnityRoot};
use crate::averages::{
    average_monodromy, centrality_deviation, product_formula_residual, qdet_average_poly, GENERATORS,
};
use crate::baxterq::{
    b_zero_checks, baxter_residual, chp_restriction, coefficient_identities, mobius_solve, q_commutator,
    triangularity_residual, y_function, y_lambda_recursion_residual, y_shift_recursion_residual, GaugeOptions, SigmaChain,
};
use crate::chp::{
    baxter_operator_residual, bethe_completeness, bs_orbit_products, chp_transfer, curve_solve, eigenvalue_map,
    inversion_residual, normality_check, rbar_subvariety, sadj_curve, sadj_point, sadj_spectral_point, tau2_params_from_curve,
    theta_commutator, w_conjugation_residual, w_recursion_residual, ChpConfig, RbarSpec, Which,
};
use crate::linalg::{commutator_residual, Mat};
use crate::model::{
    hermiticity_residual, make_sadj_subvariety, make_selfadjoint, monodromy, qdet_operator, qdet_scalar, qdet_scale, sadj_baxter_coeffs,
    sample_sites, subvariety_residual, transfer, yang_baxter_residual, ModelParams, SelfAdjointFree, SubvarietyFree,
};
use crate::sov::{compare_bases, regauge, sov_basis_direct, sov_basis_recursive, sov_coefficients, verify_actions};
use crate::spectrum::{
    attach_baxter, certify_spectrum, det_functional, joint_diagonalize, q_from_cofactor, q_operator, q_operator_checks,
    wavefunction_check, FunctionalMatrixSpec, SpectralLine,
};

type Check = Result<f64, String>;

fn err<E: ToString>(e: E) -> String {
    e.to_string()
}

/// Max of the values; the first error wins, NaN counts as a failure.
fn worst<I: IntoIterator<Item = Check>>(it: I) -> Check {
    let mut m = 0.0f64;
    for r in it {
        let v = r?;
        m = if v.is_nan() { f64::INFINITY } else { m.max(v) };
    }
    Ok(m)
}

fn flag(bad: bool) -> f64 {
    if bad {
        1.0
    } else {
        0.0
    }
}

fn uniform_chp(cfg: &RunConfig) -> bool {
    match cfg.mode {
        Mode::Chp => cfg.chp.as_ref().is_some_and(|c| c.uniform),
        Mode::ChpSelfAdjoint | Mode::ChpRbar => true,
        _ => false,
    }
}

fn subvariety_mode(mode: Mode) -> bool {
    matches!(mode, Mode::SadjSubvariety | Mode::ChpRbar)
}

/// The simplicity inequality holds for almost all parameters, not on the special families.
fn generic_mode(mode: Mode) -> bool {
    matches!(mode, Mode::General | Mode::SelfAdjoint | Mode::Baxterq)
}

/// On chp_rbar a^p + b^p = 0, so the B average vanishes and the average monodromy is scalar.
pub(crate) fn scalar_monodromy(mode: Mode) -> bool {
    mode == Mode::ChpRbar
}

/// Names of the checks a stage records for this configuration.
pub fn expected_checks(cfg: &RunConfig, stage: Stage) -> Vec<&'static str> {
    let sadj = cfg.mode.tau_epsilon(cfg.epsilon).is_some();
    let mut v: Vec<&'static str> = match stage {
        Stage::Model => {
            let mut v = vec!["model.constraints"];
            if sadj {
                v.push("model.hermiticity");
            }
            if subvariety_mode(cfg.mode) {
                v.push("model.subvariety");
            }
            v
        }
        Stage::Algebra => vec![
            "algebra.yang_baxter",
            "algebra.weyl",
            "algebra.theta_monodromy",
            "algebra.theta_transfer",
            "algebra.transfer_commute",
        ],
        Stage::Qdet => vec!["qdet.operator"],
        Stage::Averages => vec!["averages.centrality", "averages.product_formula", "averages.det_contract"],
        Stage::Sov => {
            let mut v = vec![
                "sov.basis_agreement",
                "sov.level_consistency",
                "sov.b_eigen",
                "sov.z_separation",
                "sov.b_zero",
                "sov.coefficient_qdet",
                "sov.coefficient_averages",
                "sov.actions",
                "sov.theta_shift",
            ];
            if generic_mode(cfg.mode) {
                v.push("sov.simplicity");
            }
            v
        }
        Stage::Spectrum => {
            let mut v = vec![
                "spectrum.count",
                "spectrum.distinct",
                "spectrum.parity",
                "spectrum.asymptotics",
                "spectrum.det_functional",
                "spectrum.negative_control",
            ];
            if cfg.n >= 2 && !scalar_monodromy(cfg.mode) {
                v.push("spectrum.wavefunction");
            }
            if sadj {
                v.push("spectrum.t_real");
            }
            v
        }
        Stage::Bethe => vec![
            "bethe.q_degree",
            "bethe.baxter",
            "bethe.bethe",
            "bethe.t_reconstruction",
            "bethe.cofactor_agreement",
            "bethe.cofactor_identities",
            "bethe.root_sets",
            "bethe.q_operator_commute",
            "bethe.q_operator_baxter",
            "bethe.q_operator_self_adjoint",
        ],
        Stage::Chp => {
            let mut v = vec![
                "chp.curve",
                "chp.inversion",
                "chp.w_recursion",
                "chp.baxter",
                "chp.theta",
                "chp.orbit_omega",
            ];
            if !scalar_monodromy(cfg.mode) {
                v.push("chp.generalized_q");
            }
            if uniform_chp(cfg) {
                v.extend(["chp.commutativity", "chp.eigen_map", "chp.eigen_map_separation"]);
            }
            v
        }
        Stage::ChpSadj => vec!["chp_sadj.normality", "chp_sadj.normalization", "chp_sadj.w_conjugation", "chp_sadj.negative_control"],
        Stage::ChpRbar => vec!["chp_rbar.states", "chp_rbar.bethe", "chp_rbar.root_sets", "chp_rbar.separation"],
        Stage::Baxterq => vec![
            "baxterq.triangularity",
            "baxterq.baxter",
            "baxterq.average_identities",
            "baxterq.n_b",
            "baxterq.closure",
            "baxterq.omega",
            "baxterq.similarity",
            "baxterq.y_tables",
            "baxterq.b_zero",
            "baxterq.b_zero_branch",
        ],
    };
    v.sort_unstable();
    v
}

/// Deterministic spectral samples with moduli in [0.6, 1.4].
fn samples(seed: u64, salt: u64, count: usize) -> Vec<C64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ salt);
    (0..count)
        .map(|_| C64::from_polar(rng.gen_range(0.6..1.4), rng.gen_range(0.0..std::f64::consts::TAU)))
        .collect()
}

/// Parameters shared by all stages.
pub(crate) struct Setup {
    pub root: UnityRoot,
    pub params: Result<ModelParams, String>,
    pub chp: Result<Option<ChpConfig>, String>,
}

impl Setup {
    pub fn build(cfg: &RunConfig) -> Setup {
        let root = cfg.root();
        let chp = if cfg.mode.is_chp() { build_chp(cfg, &root).map(Some) } else { Ok(None) };
        let params = match &chp {
            Ok(Some(c)) => tau2_params_from_curve(&root, c).map_err(err),
            Err(e) => Err(format!("chiral Potts setup: {e}")),
            Ok(None) => build_params(cfg, &root),
        };
        Setup { root, params, chp }
    }
}

fn build_params(cfg: &RunConfig, root: &UnityRoot) -> Result<ModelParams, String> {
    let eps = cfg.epsilon;
    match cfg.sites.as_ref().expect("validated") {
        Sites::Explicit(list) => ModelParams::new(root.clone(), list.clone()).map_err(err),
        Sites::Sampler(s) => {
            let mut rng = ChaCha8Rng::seed_from_u64(s.seed);
            let [lo, hi] = s.moduli;
            match cfg.mode {
                Mode::SelfAdjoint => {
                    let free: Vec<SelfAdjointFree> = sample_sites(&mut rng, cfg.n, lo, hi)
                        .into_iter()
                        .map(|s| SelfAdjointFree { alpha: s.alpha, a: s.a, b: s.b })
                        .collect();
                    make_selfadjoint(root, &free, eps).map_err(err)
                }
                Mode::SadjSubvariety => make_sadj_subvariety(root, &SubvarietyFree::sample(&mut rng, cfg.n), eps).map_err(err),
                _ => ModelParams::new(root.clone(), sample_sites(&mut rng, cfg.n, lo, hi)).map_err(err),
            }
        }
    }
}

fn random_point(rng: &mut ChaCha8Rng) -> (C64, C64) {
    let mut c = || C64::from_polar(rng.gen_range(0.5..1.5), rng.gen_range(0.0..std::f64::consts::TAU));
    (c(), c())
}

fn build_chp(cfg: &RunConfig, root: &UnityRoot) -> Result<ChpConfig, String> {
    let spec = cfg.chp.as_ref().expect("validated");
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed.expect("validated"));
    let n = cfg.n;
    let p = root.p;
    match cfg.mode {
        Mode::Chp => {
            let k = spec.k.expect("validated");
            let mut last = String::new();
            for _ in 0..16 {
                let (a, d) = random_point(&mut rng);
                match curve_solve(p, k, a, d) {
                    Ok((curve, q1)) => {
                        let mut pts = vec![q1];
                        let want = if spec.uniform { 1 } else { 2 * n };
                        let mut tries = 0;
                        while pts.len() < want && tries < 64 {
                            tries += 1;
                            let (a, d) = random_point(&mut rng);
                            if let Ok(pt) = curve.solve(a, d) {
                                pts.push(pt);
                            }
                        }
                        if pts.len() < want {
                            return Err("could not sample curve points".into());
                        }
                        let (q_points, r_points) = if spec.uniform {
                            (vec![q1; n], vec![q1; n])
                        } else {
                            (pts[..n].to_vec(), pts[n..].to_vec())
                        };
                        return Ok(ChpConfig { curve, c0: spec.c0, q_points, r_points });
                    }
                    Err(e) => last = e.to_string(),
                }
            }
            Err(format!("no curve point found: {last}"))
        }
        Mode::ChpSelfAdjoint => {
            let k = spec.k.expect("validated");
            let kappa = if cfg.epsilon == 1 { k.re } else { k.im };
            let curve = sadj_curve(p, cfg.epsilon, kappa).map_err(err)?;
            let q = sadj_point(root, &curve, cfg.epsilon, &spec.point).map_err(err)?;
            Ok(ChpConfig { curve, c0: C64::new(1.0, 0.0), q_points: vec![q; n], r_points: vec![q; n] })
        }
        Mode::ChpRbar => {
            let q4 = root.q.powi(4);
            let mut last = String::new();
            // the phase of a is fixed up to a quarter turn; take the first one
            // admitting a curve modulus
            for m in 0..4 {
                let phi = (q4.arg() + std::f64::consts::TAU * m as f64) / 4.0;
                let rs = RbarSpec { eps: cfg.epsilon, n, phi_a: phi, eps1: cfg.epsilon, eps2: 1, d_mod: spec.d_mod };
                match rbar_subvariety(root, &rs) {
                    Ok(c) => return Ok(c),
                    Err(e) => last = e.to_string(),
                }
            }
            Err(format!("no feasible subvariety point: {last}"))
        }
        _ => unreachable!("not a chiral Potts mode"),
    }
}

/// Collects the records of one stage.
struct Recorder<'a> {
    cfg: &'a RunConfig,
    expected: Vec<&'static str>,
    out: StageOutput,
}

impl<'a> Recorder<'a> {
    fn new(cfg: &'a RunConfig, stage: Stage) -> Self {
        Recorder { cfg, expected: expected_checks(cfg, stage), out: StageOutput::default() }
    }

    fn record_scaled(&mut self, name: &'static str, r: Check, scale: f64) {
        debug_assert!(self.expected.contains(&name), "{name} not expected");
        let (_, _, bound) = registry(name).expect("registered");
        let tolerance = self.cfg.tolerance(name);
        let rec = match r {
            Ok(v) => {
                let residual = if v.is_finite() { v } else { f64::MAX };
                let pass = match bound {
                    Bound::Upper => v <= tolerance,
                    Bound::Lower => v >= tolerance,
                };
                CheckRecord { name: name.into(), residual, scale, tolerance, bound, pass, note: None }
            }
            Err(e) => CheckRecord { name: name.into(), residual: f64::MAX, scale, tolerance, bound, pass: false, note: Some(e) },
        };
        self.out.checks.push(rec);
    }

    fn record(&mut self, name: &'static str, r: Check) {
        self.record_scaled(name, r, 1.0);
    }

    fn metric(&mut self, name: &str, v: f64) {
        self.out.metrics.insert(name.into(), if v.is_finite() { v } else { f64::MAX });
    }

    /// Fails every expected check not yet recorded.
    fn finish(mut self, why: Option<&str>) -> StageOutput {
        let have: Vec<String> = self.out.checks.iter().map(|c| c.name.clone()).collect();
        for name in self.expected.clone() {
            if !have.iter().any(|h| h == name) {
                self.record(name, Err(why.unwrap_or("not computed").to_string()));
            }
        }
        self.out
    }
}

pub(crate) fn run_stage(cfg: &RunConfig, setup: &Setup, stage: Stage) -> StageOutput {
    let mut rec = Recorder::new(cfg, stage);
    let res = match stage {
        Stage::Model => model_stage(cfg, setup, &mut rec),
        Stage::Algebra => algebra_stage(cfg, setup, &mut rec),
        Stage::Qdet => qdet_stage(cfg, setup, &mut rec),
        Stage::Averages => averages_stage(cfg, setup, &mut rec),
        Stage::Sov => sov_stage(cfg, setup, &mut rec),
        Stage::Spectrum => spectrum_stage(cfg, setup, &mut rec),
        Stage::Bethe => bethe_only(cfg, setup, &mut rec),
        Stage::Chp => chp_stage(cfg, setup, &mut rec),
        Stage::ChpSadj => chp_sadj_stage(cfg, setup, &mut rec),
        Stage::ChpRbar => chp_rbar_stage(cfg, setup, &mut rec),
        Stage::Baxterq => baxterq_stage(cfg, setup, &mut rec),
    };
    let why = res.err().map(|e| format!("{} stage: {e}", stage.name()));
    rec.finish(why.as_deref())
}

fn params(setup: &Setup) -> Result<&ModelParams, String> {
    setup.params.as_ref().map_err(|e| format!("parameter setup: {e}"))
}

fn chp_cfg(setup: &Setup) -> Result<&ChpConfig, String> {
    match &setup.chp {
        Ok(Some(c)) => Ok(c),
        Ok(None) => Err("no chiral Potts data".into()),
        Err(e) => Err(format!("chiral Potts setup: {e}")),
    }
}

fn model_stage(cfg: &RunConfig, setup: &Setup, rec: &mut Recorder) -> Result<(), String> {
    let pr = params(setup)?;
    rec.record("model.constraints", Ok(pr.max_constraint_residual()));
    if let Some(e) = cfg.mode.tau_epsilon(cfg.epsilon) {
        let pts = samples(cfg.seed(), 1, cfg.grid.samples);
        rec.record("model.hermiticity", worst(pts.iter().map(|&l| hermiticity_residual(pr, e, l).map(|r| r.rel()).map_err(err))));
    }
    if subvariety_mode(cfg.mode) {
        rec.record("model.subvariety", Ok(subvariety_residual(pr)));
    }
    Ok(())
}

fn algebra_stage(cfg: &RunConfig, setup: &Setup, rec: &mut Recorder) -> Result<(), String> {
    let pr = params(setup)?;
    let pts = samples(cfg.seed(), 2, 2 * cfg.grid.samples);
    let pairs: Vec<(C64, C64)> = pts.chunks(2).map(|c| (c[0], c[1])).collect();
    rec.record("algebra.yang_baxter", worst(pairs.iter().map(|&(l, m)| yang_baxter_residual(pr, l, m).map(|r| r.rel()).map_err(err))));

    let sp = pr.space();
    let q = pr.q();
    let id = Mat::identity(sp.dim, sp.dim);
    let unit = (sp.dim as f64).sqrt();
    let weyl = (|| -> Check {
        let mut w = 0.0f64;
        for n in 1..=pr.n() {
            let un = sp.site_u(n).map_err(err)?;
            let vn = sp.site_v(n).map_err(err)?;
            for m in 1..=pr.n() {
                let vm = sp.site_v(m).map_err(err)?;
                let f = if n == m { q } else { C64::new(1.0, 0.0) };
                w = w.max((&un * &vm - &vm * &un * f).norm() / unit);
            }
            let (mut up, mut vp) = (id.clone(), id.clone());
            for _ in 0..pr.p() {
                up = &up * &un;
                vp = &vp * &vn;
            }
            w = w.max((up - &id).norm() / unit).max((vp - &id).norm() / unit);
        }
        Ok(w)
    })();
    rec.record("algebra.weyl", weyl);

    let th = sp.theta();
    rec.record(
        "algebra.theta_monodromy",
        worst(pts.iter().map(|&l| {
            let m = monodromy(pr, l).map_err(err)?;
            let r = |x: Mat, s: &Mat| x.norm() / (s.norm() * unit);
            Ok(r(&th * &m.a - &m.a * &th, &m.a)
                .max(r(&th * &m.d - &m.d * &th, &m.d))
                .max(r(&th * &m.c - &m.c * &th * q, &m.c))
                .max(r(&m.b * &th - &th * &m.b * q, &m.b)))
        })),
    );
    let transfers: Result<Vec<Mat>, String> = pts.iter().map(|&l| transfer(pr, l).map_err(err)).collect();
    match transfers {
        Ok(ts) => {
            rec.record("algebra.theta_transfer", worst(ts.iter().map(|t| Ok(commutator_residual(t, &th).rel()))));
            rec.record("algebra.transfer_commute", worst(ts.windows(2).map(|w| Ok(commutator_residual(&w[0], &w[1]).rel()))));
        }
        Err(e) => {
            rec.record("algebra.theta_transfer", Err(e.clone()));
            rec.record("algebra.transfer_commute", Err(e));
        }
    }
    Ok(())
}

fn qdet_stage(cfg: &RunConfig, setup: &Setup, rec: &mut Recorder) -> Result<(), String> {
    let pr = params(setup)?;
    let dim = pr.space().dim;
    let pts = samples(cfg.seed(), 3, cfg.grid.samples);
    rec.record(
        "qdet.operator",
        worst(pts.iter().map(|&l| {
            let op = qdet_operator(pr, l).map_err(err)?;
            let s = qdet_scalar(pr, l);
            Ok((op - Mat::identity(dim, dim) * s).norm() / (qdet_scale(pr, l) * (dim as f64).sqrt()))
        })),
    );
    Ok(())
}

fn averages_stage(cfg: &RunConfig, setup: &Setup, rec: &mut Recorder) -> Result<(), String> {
    let pr = params(setup)?;
    let grid = circle_grid(cfg.grid.points, cfg.grid.radius);
    let avg = average_monodromy(pr);
    rec.record(
        "averages.centrality",
        worst(grid.iter().flat_map(|&big| {
            GENERATORS.iter().map(move |&g| centrality_deviation(pr, g, big).map(|(_, d, _)| d).map_err(err))
        })),
    );
    rec.record("averages.product_formula", worst(grid.iter().map(|&big| product_formula_residual(pr, &avg, big).map_err(err))));
    let target = qdet_average_poly(pr);
    rec.record_scaled("averages.det_contract", Ok(avg.det().coeff_distance(&target) / target.max_abs()), target.max_abs());
    Ok(())
}

fn sov_stage(cfg: &RunConfig, setup: &Setup, rec: &mut Recorder) -> Result<(), String> {
    let pr = params(setup)?;
    let basis = sov_basis_recursive(pr).map_err(err)?;
    let grid = &basis.grid;
    rec.record("sov.basis_agreement", sov_basis_direct(pr, grid).map(|d| compare_bases(&basis, &d)).map_err(err));
    rec.record(
        "sov.level_consistency",
        Ok(basis.levels.iter().map(|l| l.fourier_consistency.max(l.zero_shift_consistency).max(l.theta_alignment)).fold(0.0, f64::max)),
    );
    rec.record("sov.z_separation", Ok(grid.separation()));
    let b = average_monodromy(pr).b;
    rec.record(
        "sov.b_zero",
        Ok((0..pr.n() - 1)
            .map(|a| {
                let z = grid.z[a];
                let scale: f64 = b.terms().map(|(e, c)| c.norm() * z.norm().powi(e)).sum();
                b.value(z).norm() / scale
            })
            .fold(0.0, f64::max)),
    );
    let coeffs = sov_coefficients(pr, grid).map_err(err)?;
    rec.record("sov.coefficient_qdet", Ok(coeffs.qdet_residual));
    let rep = verify_actions(pr, &basis, &coeffs).map_err(err)?;
    rec.record("sov.b_eigen", Ok(rep.b_eigen));
    rec.record("sov.coefficient_averages", Ok(rep.a_average.max(rep.d_average)));
    rec.record(
        "sov.actions",
        Ok([rep.a_collapse, rep.d_collapse, rep.a_gauge, rep.d_gauge, rep.a_interpolation, rep.d_interpolation]
            .into_iter()
            .fold(0.0, f64::max)),
    );
    rec.record("sov.theta_shift", Ok(rep.theta_shift));
    if generic_mode(cfg.mode) {
        rec.record("sov.simplicity", Ok(rep.simplicity_margin));
    } else {
        rec.metric("sov.simplicity_margin", rep.simplicity_margin);
    }
    Ok(())
}

fn row_of(line: &SpectralLine, p: usize, n: usize) -> SpectrumRow {
    let ni = n as i32;
    let t = (0..=ni).map(|j| line.t.coeff(-ni + 2 * j)).collect();
    let q = line.q.as_ref().map(|q| (0..=((p - 1) * n) as i32).map(|j| q.coeff(j)).collect());
    SpectrumRow {
        k: line.k,
        t,
        q,
        a_t: line.a_t,
        b_t: line.b_t,
        bethe_roots: line.bethe_roots.clone(),
        residuals: line.residuals.iter().map(|(k, &v)| (k.clone(), if v.is_finite() { v } else { f64::MAX })).collect(),
    }
}

fn spectrum_stage(cfg: &RunConfig, setup: &Setup, rec: &mut Recorder) -> Result<(), String> {
    let pr = params(setup)?;
    let (p, n) = (pr.p(), pr.n());
    let mut lines = joint_diagonalize(pr).map_err(err)?;
    rec.record("spectrum.count", Ok((lines.len() as f64 - p.pow(n as u32) as f64).abs()));
    let line_max = |lines: &[SpectralLine], key: &str| worst(lines.iter().map(|l| l.residual(key).ok_or_else(|| format!("line {} lacks {key}", l.k))));
    rec.record("spectrum.parity", line_max(&lines, "parity_leak"));
    rec.record("spectrum.asymptotics", line_max(&lines, "asymptotics"));
    if let Some(_e) = cfg.mode.tau_epsilon(cfg.epsilon) {
        rec.record(
            "spectrum.t_real",
            Ok(lines.iter().map(|l| l.t.terms().map(|(_, c)| c.im.abs()).fold(0.0, f64::max) / l.t.max_abs()).fold(0.0, f64::max)),
        );
    }

    let det_tol = cfg.tolerance("spectrum.det_functional");
    let mut genuine = Vec::with_capacity(lines.len());
    let mut control = f64::INFINITY;
    let mut det_err = None;
    for l in lines.iter_mut() {
        match det_functional(&FunctionalMatrixSpec::gauge(pr, l.t.clone())) {
            Ok(d) => {
                l.residuals.insert("det_functional".into(), d.relative());
                genuine.push(d.relative());
            }
            Err(e) => det_err = Some(e.to_string()),
        }
        // middle coefficient of the parity class of t
        let mid = -(n as i32) + 2 * (n as i32 / 2);
        let shift = LaurentPoly::monomial(mid, C64::new(1e-3 * l.t.max_abs(), 0.0));
        let bad = &l.t + &shift;
        match det_functional(&FunctionalMatrixSpec::gauge(pr, bad)) {
            Ok(d) => control = control.min(d.relative() / det_tol.max(f64::MIN_POSITIVE)),
            Err(e) => det_err = Some(e.to_string()),
        }
    }
    match det_err {
        Some(e) => {
            rec.record("spectrum.det_functional", Err(e.clone()));
            rec.record("spectrum.negative_control", Err(e));
        }
        None => {
            rec.record("spectrum.det_functional", Ok(genuine.iter().copied().fold(0.0, f64::max)));
            rec.record("spectrum.negative_control", Ok(control));
        }
    }

    let sov = if n >= 2 && !scalar_monodromy(cfg.mode) {
        (|| {
            let b = sov_basis_recursive(pr).map_err(err)?;
            let c = sov_coefficients(pr, &b.grid).map_err(err)?;
            let b = regauge(pr, &b, &c).map_err(err)?;
            Ok::<_, String>((b, c))
        })()
    } else {
        Err("single site".into())
    };
    match certify_spectrum(pr, &lines, None) {
        Ok(cert) => rec.record("spectrum.distinct", Ok(flag(!cert.distinct))),
        Err(e) => rec.record("spectrum.distinct", Err(e.to_string())),
    }
    if n >= 2 && !scalar_monodromy(cfg.mode) {
        match &sov {
            Ok((b, c)) => {
                let mut w = Ok(0.0f64);
                for l in lines.iter_mut() {
                    match wavefunction_check(pr, l, b, c) {
                        Ok(r) => {
                            let v = r.factorization.max(r.sov_baxter);
                            l.residuals.insert("wavefunction".into(), v);
                            w = w.map(|m| m.max(v));
                        }
                        Err(e) => w = Err(e.to_string()),
                    }
                }
                rec.record("spectrum.wavefunction", w);
            }
            Err(e) => rec.record("spectrum.wavefunction", Err(e.clone())),
        }
    }

    if cfg.enabled_stages().contains(&Stage::Bethe) {
        let mut sub = Recorder::new(cfg, Stage::Bethe);
        let r = bethe_checks(cfg, pr, &mut lines, &mut sub);
        let why = r.err().map(|e| format!("bethe stage: {e}"));
        let out = sub.finish(why.as_deref());
        rec.out.checks.extend(out.checks);
    }
    rec.out.rows = lines.iter().map(|l| row_of(l, p, n)).collect();
    Ok(())
}

fn bethe_only(cfg: &RunConfig, setup: &Setup, rec: &mut Recorder) -> Result<(), String> {
    let pr = params(setup)?;
    let mut lines = joint_diagonalize(pr).map_err(err)?;
    bethe_checks(cfg, pr, &mut lines, rec)?;
    rec.out.rows = lines.iter().map(|l| row_of(l, pr.p(), pr.n())).collect();
    Ok(())
}

fn bethe_checks(cfg: &RunConfig, pr: &ModelParams, lines: &mut [SpectralLine], rec: &mut Recorder) -> Result<(), String> {
    let eps = cfg.mode.tau_epsilon(cfg.epsilon).ok_or("mode has no self-adjointness sign")?;
    attach_baxter(pr, lines, eps).map_err(err)?;
    let bound = (2 * pr.root().l * pr.n()) as i32;
    rec.record(
        "bethe.q_degree",
        worst(lines.iter().map(|l| {
            let q = l.q.as_ref().ok_or("missing Q")?;
            Ok(((q.hi() - bound).max(0) - q.lo().min(0)) as f64)
        })),
    );
    let line_max = |key: &str| worst(lines.iter().map(|l| l.residual(key).ok_or_else(|| format!("line {} lacks {key}", l.k))));
    rec.record("bethe.baxter", line_max("baxter"));
    rec.record("bethe.bethe", line_max("bethe"));
    rec.record("bethe.t_reconstruction", line_max("t_reconstruction"));
    rec.record("bethe.cofactor_agreement", line_max("cofactor_agreement"));
    rec.record(
        "bethe.root_sets",
        Ok(lines
            .iter()
            .map(|l| ["congruence", "p_string_free", "eps_self_adjoint"].iter().map(|k| l.residual(k).unwrap_or(1.0)).sum::<f64>())
            .sum()),
    );
    let (a, d) = sadj_baxter_coeffs(pr, eps);
    rec.record(
        "bethe.cofactor_identities",
        worst(lines.iter().map(|l| {
            let r = q_from_cofactor(&l.t, &a, &d, pr.root(), Some(eps)).map_err(err)?.report;
            let v = [
                r.shift_identity,
                r.c11_odd_leak,
                r.c21_reflection,
                r.c1p_reflection,
                r.product_identity,
                r.baxter_cofactor,
                r.c1p_expansion,
                r.c12_expansion,
                r.conjugation.unwrap_or(0.0),
            ]
            .into_iter()
            .fold(0.0, f64::max);
            Ok(if r.zero_sets_agree && !r.fell_back { v } else { v.max(1.0) })
        })),
    );
    match q_operator(pr, lines).and_then(|op| q_operator_checks(pr, &op, eps)) {
        Ok(r) => {
            rec.record("bethe.q_operator_commute", Ok(r.q_commute.max(r.tau_commute)));
            rec.record("bethe.q_operator_baxter", Ok(r.baxter));
            rec.record("bethe.q_operator_self_adjoint", Ok(r.self_adjoint));
        }
        Err(e) => {
            for k in ["bethe.q_operator_commute", "bethe.q_operator_baxter", "bethe.q_operator_self_adjoint"] {
                rec.record(k, Err(e.to_string()));
            }
        }
    }
    Ok(())
}

fn chp_stage(cfg: &RunConfig, setup: &Setup, rec: &mut Recorder) -> Result<(), String> {
    let cf = chp_cfg(setup)?;
    let pr = params(setup)?;
    let root = &setup.root;
    let lams = samples(cfg.seed(), 5, cfg.grid.samples);
    let pts: Vec<_> = lams.iter().map(|&l| cf.spectral_point(l, 0).map_err(err)).collect();

    rec.record("chp.curve", Ok(cf.q_points.iter().chain(&cf.r_points).map(|q| cf.curve.residual(q)).fold(0.0, f64::max)));
    rec.record(
        "chp.inversion",
        worst(lams.iter().zip(&pts).map(|(&l, pt)| Ok(inversion_residual(root, cf, pr, l, pt.as_ref().map_err(Clone::clone)?)))),
    );
    rec.record(
        "chp.w_recursion",
        worst(pts.iter().flat_map(|pt| {
            cf.q_points.iter().chain(&cf.r_points).map(move |q| w_recursion_residual(root, q, pt.as_ref().map_err(Clone::clone)?).map_err(err))
        })),
    );
    rec.record(
        "chp.baxter",
        worst(lams.iter().flat_map(|&l| {
            (0..2).map(move |br| {
                let pt = cf.spectral_point(l, br).map_err(err)?;
                baxter_operator_residual(root, cf, pr, l, &pt).map_err(err)
            })
        })),
    );
    rec.record("chp.theta", worst(pts.iter().map(|pt| theta_commutator(root, cf, pt.as_ref().map_err(Clone::clone)?).map_err(err))));
    let avg = average_monodromy(pr);
    rec.record(
        "chp.orbit_omega",
        worst(lams.iter().zip(&pts).map(|(&l, pt)| {
            let (pa, pd) = bs_orbit_products(root, cf, pr, l, pt.as_ref().map_err(Clone::clone)?).map_err(err)?;
            // Symmetric functions stay well conditioned when the two eigenvalues coincide.
            let m = avg.eval(l.powi(root.p as i32));
            let tr = m[0][0] + m[1][1];
            let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
            let s = tr.norm().max(det.norm().sqrt());
            Ok(((pa + pd - tr).norm() / s).max((pa * pd - det).norm() / (s * s)))
        })),
    );
    if !scalar_monodromy(cfg.mode) {
        rec.record(
        "chp.generalized_q",
        worst(lams.iter().zip(&pts).take(3).map(|(&l, pt)| {
            let r = chp_restriction(root, cf, pt.as_ref().map_err(Clone::clone)?, l).map_err(err)?;
            Ok(r.proportionality.max(r.sigma_p_deviation))
        })),
        );
    }

    let t_at = |i: usize, br: usize| -> Result<Mat, String> {
        let pt = cf.spectral_point(lams[i % lams.len()], br).map_err(err)?;
        chp_transfer(root, cf, &pt, Which::T).map_err(err)
    };
    let commutator = (|| -> Check {
        let (t1, t2) = (t_at(0, 0)?, t_at(1, 1)?);
        let tau = transfer(pr, lams[0]).map_err(err)?;
        Ok(commutator_residual(&t1, &t2).rel().max(commutator_residual(&tau, &t1).rel()))
    })();
    if uniform_chp(cfg) {
        rec.record("chp.commutativity", commutator);
        match joint_diagonalize(pr).map_err(err).and_then(|lines| eigenvalue_map(root, cf, pr, &lines, &lams[..lams.len().min(3)]).map_err(err)) {
            Ok(r) => {
                rec.record("chp.eigen_map", Ok(r.leakage.max(r.relation)));
                rec.record("chp.eigen_map_separation", Ok(r.separation));
            }
            Err(e) => {
                rec.record("chp.eigen_map", Err(e.clone()));
                rec.record("chp.eigen_map_separation", Err(e));
            }
        }
    } else if let Ok(c) = commutator {
        rec.metric("chp.site_dependent_commutator", c);
    }
    Ok(())
}

fn chp_sadj_stage(cfg: &RunConfig, setup: &Setup, rec: &mut Recorder) -> Result<(), String> {
    let cf = chp_cfg(setup)?;
    let root = &setup.root;
    let eps = cfg.epsilon;
    let q = cf.q_points[0];
    let mods = [0.8, 1.1, 1.3];
    let pts: Vec<_> = mods
        .iter()
        .flat_map(|&x| (0..2).map(move |br| (x, br)))
        .map(|(x, br)| sadj_spectral_point(root, &cf.curve, eps, x, br).map_err(err))
        .collect();
    let reports: Vec<_> = pts.iter().map(|pt| normality_check(root, cf, pt.as_ref().map_err(Clone::clone)?).map_err(err)).collect();
    rec.record("chp_sadj.normality", worst(reports.iter().map(|r| r.as_ref().map(|r| r.conjugation.max(r.normality)).map_err(Clone::clone))));
    rec.record("chp_sadj.normalization", worst(reports.iter().map(|r| r.as_ref().map(|r| (r.g - 1.0).norm()).map_err(Clone::clone))));
    rec.record("chp_sadj.w_conjugation", worst(pts.iter().map(|pt| w_conjugation_residual(root, &q, pt.as_ref().map_err(Clone::clone)?).map_err(err))));
    let control = (|| -> Check {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed() ^ 0x5eed);
        for _ in 0..64 {
            let (a, d) = random_point(&mut rng);
            if let Ok(g) = cf.curve.solve(a, d) {
                let bad = ChpConfig { q_points: vec![g; cfg.n], r_points: vec![g; cfg.n], ..cf.clone() };
                let pt = pts[0].as_ref().map_err(Clone::clone)?;
                return normality_check(root, &bad, pt).map(|r| r.conjugation).map_err(err);
            }
        }
        Err("no off-subvariety point found".into())
    })();
    rec.record("chp_sadj.negative_control", control);
    Ok(())
}

fn chp_rbar_stage(cfg: &RunConfig, setup: &Setup, rec: &mut Recorder) -> Result<(), String> {
    let cf = chp_cfg(setup)?;
    let lams = samples(cfg.seed(), 6, cfg.grid.samples.min(3));
    let rep = bethe_completeness(&setup.root, cf, cfg.epsilon, &lams)?;
    rec.record("chp_rbar.states", Ok((rep.states as f64 - rep.expected as f64).abs()));
    rec.record("chp_rbar.bethe", Ok(rep.max_residual));
    rec.record("chp_rbar.root_sets", Ok(flag(!rep.eps_self_adjoint) + flag(!rep.distinct_bethe)));
    rec.record("chp_rbar.separation", Ok(rep.eigen_map.separation));
    rec.metric("chp_rbar.average_ratio_margin", rep.average_ratio_margin);
    rec.out.completeness = Some(rep);
    Ok(())
}

fn baxterq_stage(cfg: &RunConfig, setup: &Setup, rec: &mut Recorder) -> Result<(), String> {
    let pr = params(setup)?;
    let root = pr.root();
    let opts = GaugeOptions::default();
    let lams = samples(cfg.seed(), 7, cfg.grid.samples);
    let chains: Vec<Result<SigmaChain, String>> = lams.iter().map(|&l| mobius_solve(pr, l, &opts).map_err(err)).collect();
    let each = |f: &dyn Fn(&SigmaChain) -> Check| worst(chains.iter().map(|c| f(c.as_ref().map_err(Clone::clone)?)));

    rec.record("baxterq.triangularity", each(&|c| triangularity_residual(pr, c).map(|r| r.rel()).map_err(err)));
    rec.record("baxterq.baxter", each(&|c| baxter_residual(pr, c).map(|r| r.residual.rel()).map_err(err)));
    rec.record("baxterq.closure", each(&|c| Ok(c.cyclicity.iter().copied().fold(c.closure, f64::max))));
    let ids: Vec<Result<_, String>> = chains.iter().map(|c| coefficient_identities(pr, c.as_ref().map_err(Clone::clone)?).map_err(err)).collect();
    let from_ids = |f: &dyn Fn(&crate::baxterq::CoefficientReport) -> f64| worst(ids.iter().map(|r| r.as_ref().map(f).map_err(Clone::clone)));
    rec.record("baxterq.average_identities", from_ids(&|r| r.trace.max(r.det).max(r.det_qdet).max(r.double_ratio)));
    rec.record("baxterq.n_b", from_ids(&|r| r.n_b));
    rec.record("baxterq.omega", from_ids(&|r| r.eigenvalue.max(r.omega)));
    rec.record("baxterq.similarity", from_ids(&|r| r.similarity));
    rec.record(
        "baxterq.y_tables",
        each(&|c| {
            let mut m = 0.0f64;
            for n in 0..pr.n() {
                for shift in -1..=1 {
                    let t = y_function(root, c, n, shift).map_err(err)?;
                    m = t.cyclicity.iter().copied().fold(m, f64::max);
                }
                m = m.max(y_shift_recursion_residual(pr, c, n)).max(y_lambda_recursion_residual(pr, c, n));
            }
            Ok(m)
        }),
    );
    match b_zero_checks(pr, &opts) {
        Ok(reps) => {
            rec.record("baxterq.b_zero", Ok(reps.iter().map(|r| r.b_value.max(r.a_match).max(r.d_match).max(r.sigma_formula)).fold(0.0, f64::max)));
            rec.record("baxterq.b_zero_branch", Ok(reps.iter().filter(|r| !r.minus_rejected).count() as f64));
            rec.metric("baxterq.b_zero_count", reps.len() as f64);
        }
        Err(e) => {
            rec.record("baxterq.b_zero", Err(e.to_string()));
            rec.record("baxterq.b_zero_branch", Err(e.to_string()));
        }
    }
    if lams.len() >= 2 {
        if let Ok(v) = q_commutator(pr, lams[0], lams[1], &opts) {
            rec.metric("baxterq.q_commutator", v);
        }
    }
    Ok(())
}
