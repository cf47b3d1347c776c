//! Run configuration, suite orchestration and report emission.
//!
//! A run is a list of stages picked by the mode. Every stage owns a fixed
//! set of named checks; each enabled check is recorded exactly once, failing
//! with a note when something it depends on could not be computed.

mod stages;

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use num_complex::Complex64 as C64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::algebra::UnityRoot;
use crate::chp::{CompletenessReport, SadjPointSpec};
use crate::model::SiteParams;
use crate::weyl::MAX_DIM;

pub use stages::expected_checks;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {message}")]
    Invalid { path: String, message: String },
    #[error("cannot read {0}: {1}")]
    Io(PathBuf, std::io::Error),
}

impl ConfigError {
    fn at(path: impl Into<String>, message: impl Into<String>) -> Self {
        ConfigError::Invalid { path: path.into(), message: message.into() }
    }

    /// Field path of a validation error.
    pub fn path(&self) -> Option<&str> {
        match self {
            ConfigError::Invalid { path, .. } => Some(path),
            ConfigError::Io(..) => None,
        }
    }
}

#[derive(Debug, Error)]
pub enum EmitError {
    #[error("cannot write {0}: {1}")]
    Io(PathBuf, std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    General,
    SelfAdjoint,
    SadjSubvariety,
    Chp,
    ChpSelfAdjoint,
    ChpRbar,
    Baxterq,
}

impl Mode {
    pub fn is_chp(self) -> bool {
        matches!(self, Mode::Chp | Mode::ChpSelfAdjoint | Mode::ChpRbar)
    }

    /// Sign of the self-adjointness of tau2, if the mode has one.
    pub fn tau_epsilon(self, eps: i32) -> Option<i32> {
        match self {
            Mode::SelfAdjoint | Mode::SadjSubvariety => Some(eps),
            Mode::ChpSelfAdjoint | Mode::ChpRbar => Some(-eps),
            _ => None,
        }
    }

    pub fn default_stages(self) -> Vec<Stage> {
        use Stage::*;
        let mut s = vec![Model, Algebra, Qdet, Averages, Sov, Spectrum];
        match self {
            Mode::General | Mode::SelfAdjoint => {}
            Mode::SadjSubvariety => s.push(Bethe),
            Mode::Chp => s.push(Chp),
            Mode::ChpSelfAdjoint => s.extend([Chp, ChpSadj]),
            Mode::ChpRbar => {
                s.retain(|&x| x != Sov);
                s.extend([Bethe, Chp, ChpRbar]);
            }
            Mode::Baxterq => s.push(Baxterq),
        }
        s
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Model,
    Algebra,
    Qdet,
    Averages,
    Sov,
    Spectrum,
    Bethe,
    Chp,
    ChpSadj,
    ChpRbar,
    Baxterq,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Model => "model",
            Stage::Algebra => "algebra",
            Stage::Qdet => "qdet",
            Stage::Averages => "averages",
            Stage::Sov => "sov",
            Stage::Spectrum => "spectrum",
            Stage::Bethe => "bethe",
            Stage::Chp => "chp",
            Stage::ChpSadj => "chp_sadj",
            Stage::ChpRbar => "chp_rbar",
            Stage::Baxterq => "baxterq",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Json,
    Csv,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bound {
    /// Pass when residual <= tolerance.
    Upper,
    /// Pass when residual >= tolerance (margins and negative controls).
    Lower,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sampler {
    pub seed: u64,
    #[serde(default = "default_moduli")]
    pub moduli: [f64; 2],
}

fn default_moduli() -> [f64; 2] {
    [0.5, 2.0]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Sites {
    Explicit(Vec<SiteParams>),
    Sampler(Sampler),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Grid {
    #[serde(default = "default_radius")]
    pub radius: f64,
    #[serde(default = "default_points")]
    pub points: usize,
    /// Random spectral parameters per pointwise check.
    #[serde(default = "default_samples")]
    pub samples: usize,
}

fn default_radius() -> f64 {
    crate::algebra::GRID_RADIUS
}

fn default_points() -> usize {
    7
}

fn default_samples() -> usize {
    5
}

impl Default for Grid {
    fn default() -> Self {
        Grid { radius: default_radius(), points: default_points(), samples: default_samples() }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Output {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dir: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub format: Option<Format>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChpSpec {
    /// Curve modulus; for chp_self_adjoint it must be real (epsilon = 1) or
    /// imaginary (epsilon = -1). Unused by chp_rbar, where the phases fix it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<C64>,
    /// Seed for the inhomogeneity points and the spectral samples.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default = "one")]
    pub c0: C64,
    /// Same point for every q_n and r_n (chp mode; the other chp modes are always uniform).
    #[serde(default)]
    pub uniform: bool,
    /// Self-adjoint inhomogeneity point (chp_self_adjoint).
    #[serde(default = "default_sadj_point")]
    pub point: SadjPointSpec,
    /// |d| of the subvariety point (chp_rbar).
    #[serde(default = "default_d_mod")]
    pub d_mod: f64,
}

fn one() -> C64 {
    C64::new(1.0, 0.0)
}

fn default_sadj_point() -> SadjPointSpec {
    SadjPointSpec { x_mod: 0.9, phase_branch: 0, root_index: 0, eps0: 1, d_mod: 1.2 }
}

fn default_d_mod() -> f64 {
    1.1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub p_odd: usize,
    pub p_prime: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sites: Option<Sites>,
    #[serde(rename = "N", alias = "n", default = "default_n")]
    pub n: usize,
    pub mode: Mode,
    #[serde(default = "default_eps")]
    pub epsilon: i32,
    #[serde(default)]
    pub tolerances: BTreeMap<String, f64>,
    #[serde(default)]
    pub grid: Grid,
    #[serde(default)]
    pub output: Output,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chp: Option<ChpSpec>,
    /// Replaces the mode's default stage list.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stages: Option<Vec<Stage>>,
}

fn default_n() -> usize {
    2
}

fn default_eps() -> i32 {
    1
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            ConfigError::at(if path == "." { String::new() } else { path }, e.into_inner().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn root(&self) -> UnityRoot {
        UnityRoot::new(self.p_odd, self.p_prime).expect("validated")
    }

    /// Seed driving every random draw of the run.
    pub fn seed(&self) -> u64 {
        match (&self.sites, &self.chp) {
            (Some(Sites::Sampler(s)), _) => s.seed,
            (_, Some(c)) if c.seed.is_some() => c.seed.unwrap(),
            _ => 0,
        }
    }

    pub fn set_seed(&mut self, seed: u64) {
        if let Some(Sites::Sampler(s)) = &mut self.sites {
            s.seed = seed;
        }
        if let Some(c) = &mut self.chp {
            c.seed = Some(seed);
        }
        if self.sites.is_none() && !self.mode.is_chp() {
            self.sites = Some(Sites::Sampler(Sampler { seed, moduli: default_moduli() }));
        }
    }

    pub fn enabled_stages(&self) -> Vec<Stage> {
        let mut s = self.stages.clone().unwrap_or_else(|| self.mode.default_stages());
        if self.n < 2 {
            s.retain(|&x| x != Stage::Sov);
        }
        let set: BTreeSet<Stage> = s.into_iter().collect();
        set.into_iter().collect()
    }

    pub fn tolerance(&self, name: &str) -> f64 {
        self.tolerances.get(name).copied().unwrap_or_else(|| registry(name).expect("registered check").1)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.p_odd < 3 || self.p_odd.is_multiple_of(2) {
            return Err(ConfigError::at("p_odd", format!("{} is not an odd integer >= 3", self.p_odd)));
        }
        let root = UnityRoot::new(self.p_odd, self.p_prime).map_err(|e| ConfigError::at("p_prime", e.to_string()))?;
        if !root.is_primitive() {
            return Err(ConfigError::at("p_prime", "p' must be coprime to p"));
        }
        if self.n == 0 {
            return Err(ConfigError::at("N", "chain length must be positive"));
        }
        match self.p_odd.checked_pow(self.n as u32) {
            Some(d) if d <= MAX_DIM => {}
            _ => return Err(ConfigError::at("N", format!("p^N exceeds {MAX_DIM}"))),
        }
        if self.epsilon != 1 && self.epsilon != -1 {
            return Err(ConfigError::at("epsilon", "must be 1 or -1"));
        }
        for (k, &v) in &self.tolerances {
            if registry(k).is_none() {
                return Err(ConfigError::at(format!("tolerances.{k}"), "unknown check"));
            }
            if !(v.is_finite() && v >= 0.0) {
                return Err(ConfigError::at(format!("tolerances.{k}"), "must be finite and nonnegative"));
            }
        }
        if !(self.grid.radius.is_finite() && self.grid.radius > 0.0) {
            return Err(ConfigError::at("grid.radius", "must be positive"));
        }
        if self.grid.points == 0 {
            return Err(ConfigError::at("grid.points", "must be positive"));
        }
        if self.grid.samples == 0 {
            return Err(ConfigError::at("grid.samples", "must be positive"));
        }
        match &self.sites {
            None if !self.mode.is_chp() => return Err(ConfigError::at("sites", "required for this mode")),
            Some(_) if self.mode.is_chp() => {
                return Err(ConfigError::at("sites", "chiral Potts modes build their sites from the curve"))
            }
            Some(Sites::Sampler(s)) => {
                let [lo, hi] = s.moduli;
                if !(lo > 0.0 && hi > lo && hi.is_finite()) {
                    return Err(ConfigError::at("sites.moduli", "need 0 < lo < hi"));
                }
            }
            Some(Sites::Explicit(list)) => {
                if list.len() != self.n {
                    return Err(ConfigError::at("sites", format!("{} sites given for N = {}", list.len(), self.n)));
                }
                for (i, s) in list.iter().enumerate() {
                    let r = s.constraint_residual();
                    if !(r < 1e-10) {
                        return Err(ConfigError::at(format!("sites[{i}]"), format!("alpha gamma = a c, beta delta = b d violated ({r:.2e})")));
                    }
                }
            }
            None => {}
        }
        if self.mode.is_chp() {
            let Some(c) = &self.chp else {
                return Err(ConfigError::at("chp", "required for chiral Potts modes"));
            };
            if c.seed.is_none() {
                return Err(ConfigError::at("chp.seed", "required for chiral Potts modes"));
            }
            if self.mode != Mode::ChpRbar {
                let Some(k) = c.k else {
                    return Err(ConfigError::at("chp.k", "curve modulus required"));
                };
                if k.norm() == 0.0 || (k.norm() - 1.0).abs() < 1e-12 && k.im == 0.0 {
                    return Err(ConfigError::at("chp.k", "degenerate modulus"));
                }
                if self.mode == Mode::ChpSelfAdjoint {
                    let off = if self.epsilon == 1 { k.im } else { k.re };
                    if off.abs() > 1e-14 {
                        return Err(ConfigError::at("chp.k", "must be real for epsilon = 1 and imaginary for epsilon = -1"));
                    }
                }
            }
            if !(c.d_mod > 0.0) {
                return Err(ConfigError::at("chp.d_mod", "must be positive"));
            }
        }
        if let Some(list) = &self.stages {
            for (i, s) in list.iter().enumerate() {
                let needs_chp = matches!(s, Stage::Chp | Stage::ChpSadj | Stage::ChpRbar);
                let ok = match s {
                    Stage::Chp => self.mode.is_chp(),
                    Stage::ChpSadj => self.mode == Mode::ChpSelfAdjoint,
                    Stage::ChpRbar => self.mode == Mode::ChpRbar,
                    Stage::Bethe => matches!(self.mode, Mode::SadjSubvariety | Mode::ChpRbar),
                    Stage::Sov => self.mode != Mode::ChpRbar,
                    _ => true,
                };
                if !ok {
                    let why = match s {
                        _ if needs_chp => "needs the matching chiral Potts mode",
                        Stage::Sov => "separation of variables needs a nonzero B average, which vanishes on chp_rbar",
                        _ => "needs a subvariety mode",
                    };
                    return Err(ConfigError::at(format!("stages[{i}]"), why));
                }
            }
        }
        Ok(())
    }
}

pub fn load_config(path: &Path) -> Result<RunConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io(path.to_path_buf(), e))?;
    RunConfig::from_json(&text)
}

/// Template with every field spelled out.
pub fn sample_config(mode: Mode) -> RunConfig {
    let chp = mode.is_chp().then(|| ChpSpec {
        k: (mode != Mode::ChpRbar).then(|| C64::new(0.35, 0.0)),
        seed: Some(42),
        c0: one(),
        uniform: mode == Mode::ChpSelfAdjoint,
        point: default_sadj_point(),
        d_mod: default_d_mod(),
    });
    RunConfig {
        p_odd: 3,
        p_prime: 2,
        sites: (!mode.is_chp()).then(|| Sites::Sampler(Sampler { seed: 42, moduli: default_moduli() })),
        n: 2,
        mode,
        epsilon: 1,
        tolerances: BTreeMap::new(),
        grid: Grid::default(),
        output: Output { dir: None, format: Some(Format::Json) },
        chp,
        stages: None,
    }
}

/// Default tolerance and bound of every check.
const REGISTRY: &[(&str, f64, Bound)] = &[
    ("algebra.theta_monodromy", 1e-11, Bound::Upper),
    ("algebra.theta_transfer", 1e-11, Bound::Upper),
    ("algebra.transfer_commute", 1e-11, Bound::Upper),
    ("algebra.weyl", 1e-11, Bound::Upper),
    ("algebra.yang_baxter", 1e-11, Bound::Upper),
    ("averages.centrality", 1e-9, Bound::Upper),
    ("averages.det_contract", 1e-8, Bound::Upper),
    ("averages.product_formula", 1e-9, Bound::Upper),
    ("baxterq.average_identities", 1e-8, Bound::Upper),
    ("baxterq.b_zero", 1e-8, Bound::Upper),
    ("baxterq.b_zero_branch", 0.0, Bound::Upper),
    ("baxterq.baxter", 1e-8, Bound::Upper),
    ("baxterq.closure", 1e-9, Bound::Upper),
    ("baxterq.n_b", 1e-10, Bound::Upper),
    ("baxterq.omega", 1e-8, Bound::Upper),
    ("baxterq.similarity", 1e-8, Bound::Upper),
    ("baxterq.triangularity", 1e-9, Bound::Upper),
    ("baxterq.y_tables", 1e-9, Bound::Upper),
    ("bethe.baxter", 1e-7, Bound::Upper),
    ("bethe.bethe", 1e-6, Bound::Upper),
    ("bethe.cofactor_agreement", 1e-6, Bound::Upper),
    ("bethe.cofactor_identities", 1e-7, Bound::Upper),
    ("bethe.q_degree", 0.0, Bound::Upper),
    ("bethe.q_operator_baxter", 1e-7, Bound::Upper),
    ("bethe.q_operator_commute", 1e-8, Bound::Upper),
    ("bethe.q_operator_self_adjoint", 1e-8, Bound::Upper),
    ("bethe.root_sets", 0.0, Bound::Upper),
    ("bethe.t_reconstruction", 1e-7, Bound::Upper),
    ("chp.baxter", 1e-8, Bound::Upper),
    ("chp.commutativity", 1e-9, Bound::Upper),
    ("chp.curve", 1e-10, Bound::Upper),
    ("chp.eigen_map", 1e-7, Bound::Upper),
    ("chp.eigen_map_separation", 1e-6, Bound::Lower),
    ("chp.generalized_q", 1e-8, Bound::Upper),
    ("chp.inversion", 1e-10, Bound::Upper),
    ("chp.orbit_omega", 1e-8, Bound::Upper),
    ("chp.theta", 1e-10, Bound::Upper),
    ("chp.w_recursion", 1e-10, Bound::Upper),
    ("chp_rbar.bethe", 1e-6, Bound::Upper),
    ("chp_rbar.root_sets", 0.0, Bound::Upper),
    ("chp_rbar.separation", 1e-6, Bound::Lower),
    ("chp_rbar.states", 0.0, Bound::Upper),
    ("chp_sadj.negative_control", 0.1, Bound::Lower),
    ("chp_sadj.normality", 1e-8, Bound::Upper),
    ("chp_sadj.normalization", 1e-8, Bound::Upper),
    ("chp_sadj.w_conjugation", 1e-10, Bound::Upper),
    ("model.constraints", 1e-10, Bound::Upper),
    ("model.hermiticity", 1e-10, Bound::Upper),
    ("model.subvariety", 1e-10, Bound::Upper),
    ("qdet.operator", 1e-10, Bound::Upper),
    ("sov.actions", 1e-8, Bound::Upper),
    ("sov.b_eigen", 1e-9, Bound::Upper),
    ("sov.b_zero", 1e-9, Bound::Upper),
    ("sov.basis_agreement", 1e-7, Bound::Upper),
    ("sov.coefficient_averages", 1e-8, Bound::Upper),
    ("sov.coefficient_qdet", 1e-9, Bound::Upper),
    ("sov.level_consistency", 1e-9, Bound::Upper),
    ("sov.simplicity", 1e-6, Bound::Lower),
    ("sov.theta_shift", 1e-10, Bound::Upper),
    ("sov.z_separation", 1e-6, Bound::Lower),
    ("spectrum.asymptotics", 1e-6, Bound::Upper),
    ("spectrum.count", 0.0, Bound::Upper),
    ("spectrum.det_functional", 1e-6, Bound::Upper),
    ("spectrum.distinct", 0.0, Bound::Upper),
    ("spectrum.negative_control", 1e2, Bound::Lower),
    ("spectrum.parity", 1e-9, Bound::Upper),
    ("spectrum.t_real", 1e-9, Bound::Upper),
    ("spectrum.wavefunction", 1e-7, Bound::Upper),
];

/// (name, default tolerance, bound) of a registered check.
pub fn registry(name: &str) -> Option<(&'static str, f64, Bound)> {
    REGISTRY.iter().find(|r| r.0 == name).copied()
}

pub fn registered_checks() -> impl Iterator<Item = &'static str> {
    REGISTRY.iter().map(|r| r.0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckRecord {
    pub name: String,
    /// Relative residual (or margin, for lower-bound checks).
    pub residual: f64,
    /// Magnitude the residual was normalized by.
    pub scale: f64,
    pub tolerance: f64,
    pub bound: Bound,
    pub pass: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

/// One joint eigenline of (tau2, Theta).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectrumRow {
    pub k: usize,
    /// Coefficients of lambda^{-N+2j}, j = 0..N.
    pub t: Vec<C64>,
    /// Coefficients of lambda^j, j = 0..2lN.
    pub q: Option<Vec<C64>>,
    pub a_t: Option<usize>,
    pub b_t: Option<usize>,
    pub bethe_roots: Vec<C64>,
    pub residuals: BTreeMap<String, f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    pub seed: u64,
    pub version: String,
    pub mode: Mode,
    pub p: usize,
    pub p_prime: usize,
    pub n: usize,
    pub stages: Vec<Stage>,
    pub wall_time_s: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub metadata: Metadata,
    /// Sorted by name.
    pub checks: Vec<CheckRecord>,
    /// Informational quantities without a pass/fail meaning.
    pub metrics: BTreeMap<String, f64>,
    pub spectrum: Vec<SpectrumRow>,
    #[serde(default)]
    pub completeness: Option<CompletenessReport>,
}

impl RunReport {
    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn failures(&self) -> impl Iterator<Item = &CheckRecord> {
        self.checks.iter().filter(|c| !c.pass)
    }

    pub fn check(&self, name: &str) -> Option<&CheckRecord> {
        self.checks.iter().find(|c| c.name == name)
    }

    /// JSON payload without the wall time.
    pub fn payload(&self) -> String {
        let mut r = self.clone();
        r.metadata.wall_time_s = 0.0;
        serde_json::to_string(&r).expect("report serializes")
    }
}

/// Output of one stage before aggregation.
#[derive(Default)]
pub(crate) struct StageOutput {
    pub checks: Vec<CheckRecord>,
    pub metrics: BTreeMap<String, f64>,
    pub rows: Vec<SpectrumRow>,
    pub completeness: Option<CompletenessReport>,
}

/// Runs every enabled stage. Stages are independent and may run in
/// parallel; aggregation is sorted by name, so the payload does not depend on
/// scheduling.
pub fn run_suite(cfg: &RunConfig) -> RunReport {
    let start = Instant::now();
    let stages = cfg.enabled_stages();
    let setup = stages::Setup::build(cfg);
    // bethe shares the eigenlines of the spectrum stage when both run
    let tasks: Vec<Stage> = stages.iter().copied().filter(|&s| !(s == Stage::Bethe && stages.contains(&Stage::Spectrum))).collect();
    let outputs: Vec<StageOutput> = tasks.par_iter().map(|&s| stages::run_stage(cfg, &setup, s)).collect();
    let mut checks = Vec::new();
    let mut metrics = BTreeMap::new();
    let mut spectrum = Vec::new();
    let mut completeness = None;
    for o in outputs {
        checks.extend(o.checks);
        metrics.extend(o.metrics);
        if !o.rows.is_empty() {
            spectrum = o.rows;
        }
        if o.completeness.is_some() {
            completeness = o.completeness;
        }
    }
    checks.sort_by(|a, b| a.name.cmp(&b.name));
    RunReport {
        metadata: Metadata {
            seed: cfg.seed(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            mode: cfg.mode,
            p: cfg.p_odd,
            p_prime: cfg.p_prime,
            n: cfg.n,
            stages,
            wall_time_s: start.elapsed().as_secs_f64(),
        },
        checks,
        metrics,
        spectrum,
        completeness,
    }
}

fn finite(x: f64) -> f64 {
    if x.is_finite() {
        x
    } else {
        f64::MAX
    }
}

pub fn csv_header(p: usize, n: usize) -> Vec<String> {
    let mut h = vec!["k".to_string()];
    for j in 0..=n {
        h.push(format!("t_{j}_re"));
        h.push(format!("t_{j}_im"));
    }
    for j in 0..=(p - 1) * n {
        h.push(format!("Q_{j}_re"));
        h.push(format!("Q_{j}_im"));
    }
    h.push("max_bethe_residual".into());
    h.push("det_functional_residual".into());
    h
}

/// One row per spectral line; columns absent from a line are left empty.
pub fn write_csv<W: Write>(report: &RunReport, out: W) -> Result<(), EmitError> {
    let (p, n) = (report.metadata.p, report.metadata.n);
    let mut w = csv::Writer::from_writer(out);
    w.write_record(csv_header(p, n))?;
    let num = |x: f64| format!("{:e}", finite(x));
    for row in &report.spectrum {
        let mut rec = vec![row.k.to_string()];
        for j in 0..=n {
            let c = row.t.get(j).copied().unwrap_or_default();
            rec.extend([num(c.re), num(c.im)]);
        }
        for j in 0..=(p - 1) * n {
            match &row.q {
                Some(q) => {
                    let c = q.get(j).copied().unwrap_or_default();
                    rec.extend([num(c.re), num(c.im)]);
                }
                None => rec.extend([String::new(), String::new()]),
            }
        }
        let res = |k: &str| row.residuals.get(k).map(|&x| num(x.abs())).unwrap_or_default();
        rec.push(res("bethe"));
        rec.push(res("det_functional"));
        w.write_record(rec)?;
    }
    w.flush().map_err(|e| EmitError::Io(PathBuf::from("<csv>"), e))?;
    Ok(())
}

/// Writes report.json or report.csv into `dir` and returns the path.
pub fn emit_report(report: &RunReport, format: Format, dir: &Path) -> Result<PathBuf, EmitError> {
    std::fs::create_dir_all(dir).map_err(|e| EmitError::Io(dir.to_path_buf(), e))?;
    let path = dir.join(match format {
        Format::Json => "report.json",
        Format::Csv => "report.csv",
    });
    let file = std::fs::File::create(&path).map_err(|e| EmitError::Io(path.clone(), e))?;
    let mut buf = std::io::BufWriter::new(file);
    match format {
        Format::Json => {
            serde_json::to_writer_pretty(&mut buf, report)?;
            buf.write_all(b"\n").map_err(|e| EmitError::Io(path.clone(), e))?;
        }
        Format::Csv => write_csv(report, &mut buf)?,
    }
    buf.flush().map_err(|e| EmitError::Io(path.clone(), e))?;
    Ok(path)
}

pub fn load_report(path: &Path) -> Result<RunReport, EmitError> {
    let text = std::fs::read_to_string(path).map_err(|e| EmitError::Io(path.to_path_buf(), e))?;
    Ok(serde_json::from_str(&text)?)
}

#[cfg(test)]
mod tests;
