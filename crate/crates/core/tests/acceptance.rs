//! Acceptance criteria, one pass/fail line each. Run with `--nocapture` to
//! see the lines.

use std::time::Instant;

use tau2::cli::{registry, run_suite, sample_config, Bound, Mode, RunConfig, RunReport, Stage};

type Outcome = Result<String, String>;

fn config(mode: Mode, n: usize, seed: u64, stages: Option<&[Stage]>) -> RunConfig {
    let mut c = sample_config(mode);
    c.n = n;
    c.set_seed(seed);
    c.stages = stages.map(|s| s.to_vec());
    c.validate().expect("acceptance config validates");
    c
}

fn uniform_chp(n: usize, seed: u64) -> RunConfig {
    let mut c = config(Mode::Chp, n, seed, None);
    c.chp.as_mut().unwrap().uniform = true;
    c
}

/// The registered tolerance must be the one the criterion states.
fn tolerance_is(name: &str, want: f64, bound: Bound) -> Result<(), String> {
    match registry(name) {
        Some((_, t, b)) if t == want && b == bound => Ok(()),
        Some((_, t, b)) => Err(format!("{name}: registered {b:?} {t:e}, criterion {bound:?} {want:e}")),
        None => Err(format!("{name}: not registered")),
    }
}

/// Every named check must be present and passing; returns the worst residual
/// of upper-bound checks for the summary line.
fn require(label: &str, report: &RunReport, names: &[&str]) -> Result<f64, String> {
    let mut worst = 0.0f64;
    for &name in names {
        let c = report.check(name).ok_or_else(|| format!("{label}: {name} missing"))?;
        if !c.pass {
            return Err(format!(
                "{label}: {name} residual {:.3e} vs {:.1e}{}",
                c.residual,
                c.tolerance,
                c.note.as_deref().map(|n| format!(" ({n})")).unwrap_or_default()
            ));
        }
        if c.bound == Bound::Upper {
            worst = worst.max(c.residual / c.tolerance.max(f64::MIN_POSITIVE));
        }
    }
    Ok(worst)
}

fn criterion_1() -> Outcome {
    for n in ["algebra.yang_baxter", "algebra.weyl", "algebra.theta_monodromy", "algebra.theta_transfer"] {
        tolerance_is(n, 1e-11, Bound::Upper)?;
    }
    let names = ["algebra.yang_baxter", "algebra.weyl", "algebra.theta_monodromy", "algebra.theta_transfer"];
    let mut worst = 0.0f64;
    let mut time = 0.0f64;
    for mode in [Mode::General, Mode::SelfAdjoint, Mode::Chp] {
        for n in 1..=3 {
            let cfg = config(mode, n, 11, Some(&[Stage::Algebra]));
            if cfg.grid.samples != 5 {
                return Err(format!("{} spectral samples instead of 5", cfg.grid.samples));
            }
            let r = run_suite(&cfg);
            worst = worst.max(require(&format!("{mode:?} N={n}"), &r, &names)?);
            if n == 3 {
                time = time.max(r.metadata.wall_time_s);
            }
        }
    }
    if time >= 5.0 {
        return Err(format!("algebra at N=3 took {time:.2} s"));
    }
    Ok(format!("worst residual/tolerance {worst:.1e}, N=3 in {time:.2} s"))
}

fn criterion_2() -> Outcome {
    tolerance_is("qdet.operator", 1e-10, Bound::Upper)?;
    let mut worst = 0.0f64;
    for n in 1..=3 {
        for seed in [21, 22, 23] {
            let r = run_suite(&config(Mode::General, n, seed, Some(&[Stage::Qdet])));
            worst = worst.max(require(&format!("N={n} seed {seed}"), &r, &["qdet.operator"])?);
        }
    }
    Ok(format!("9 draws over N = 1, 2, 3, worst residual/tolerance {worst:.1e}"))
}

fn criterion_3() -> Outcome {
    tolerance_is("averages.centrality", 1e-9, Bound::Upper)?;
    tolerance_is("averages.product_formula", 1e-9, Bound::Upper)?;
    tolerance_is("averages.det_contract", 1e-8, Bound::Upper)?;
    let names = ["averages.centrality", "averages.product_formula", "averages.det_contract"];
    let mut worst = 0.0f64;
    for (mode, n) in [(Mode::General, 2), (Mode::General, 3), (Mode::SelfAdjoint, 3), (Mode::ChpRbar, 2)] {
        let cfg = config(mode, n, 31, Some(&[Stage::Averages]));
        if cfg.grid.points != 7 {
            return Err(format!("{} grid points instead of 7", cfg.grid.points));
        }
        worst = worst.max(require(&format!("{mode:?} N={n}"), &run_suite(&cfg), &names)?);
    }
    Ok(format!("7 grid points, worst residual/tolerance {worst:.1e}"))
}

fn criterion_4() -> Outcome {
    tolerance_is("sov.basis_agreement", 1e-7, Bound::Upper)?;
    tolerance_is("sov.b_eigen", 1e-9, Bound::Upper)?;
    tolerance_is("sov.b_zero", 1e-9, Bound::Upper)?;
    let names = [
        "sov.basis_agreement",
        "sov.b_eigen",
        "sov.z_separation",
        "sov.b_zero",
        "sov.coefficient_qdet",
        "sov.coefficient_averages",
        "sov.actions",
        "sov.theta_shift",
        "sov.simplicity",
    ];
    let mut worst = 0.0f64;
    let mut time = 0.0f64;
    for (mode, n) in [(Mode::General, 2), (Mode::General, 3), (Mode::SelfAdjoint, 3), (Mode::Baxterq, 3)] {
        let r = run_suite(&config(mode, n, 41, Some(&[Stage::Sov])));
        worst = worst.max(require(&format!("{mode:?} N={n}"), &r, &names)?);
        if n == 3 {
            time = time.max(r.metadata.wall_time_s);
        }
    }
    if time >= 60.0 {
        return Err(format!("SOV at N=3 took {time:.2} s"));
    }
    Ok(format!("worst residual/tolerance {worst:.1e}, N=3 in {time:.2} s"))
}

fn criterion_5() -> Outcome {
    tolerance_is("spectrum.count", 0.0, Bound::Upper)?;
    tolerance_is("spectrum.det_functional", 1e-6, Bound::Upper)?;
    tolerance_is("spectrum.negative_control", 1e2, Bound::Lower)?;
    tolerance_is("spectrum.wavefunction", 1e-7, Bound::Upper)?;
    let names = ["spectrum.count", "spectrum.distinct", "spectrum.det_functional", "spectrum.negative_control", "spectrum.wavefunction"];
    let mut worst = 0.0f64;
    let mut margin = f64::INFINITY;
    for (mode, n) in [(Mode::General, 2), (Mode::General, 3), (Mode::SelfAdjoint, 3), (Mode::Chp, 3)] {
        let r = run_suite(&config(mode, n, 51, Some(&[Stage::Spectrum])));
        worst = worst.max(require(&format!("{mode:?} N={n}"), &r, &names)?);
        if r.spectrum.len() != 3usize.pow(n as u32) {
            return Err(format!("{mode:?} N={n}: {} rows", r.spectrum.len()));
        }
        margin = margin.min(r.check("spectrum.negative_control").unwrap().residual);
    }
    Ok(format!("p^N lines, worst residual/tolerance {worst:.1e}, negative control margin x{margin:.1e}"))
}

fn criterion_6() -> Outcome {
    tolerance_is("bethe.baxter", 1e-7, Bound::Upper)?;
    tolerance_is("bethe.bethe", 1e-6, Bound::Upper)?;
    tolerance_is("bethe.t_reconstruction", 1e-7, Bound::Upper)?;
    tolerance_is("bethe.cofactor_agreement", 1e-6, Bound::Upper)?;
    tolerance_is("bethe.cofactor_identities", 1e-7, Bound::Upper)?;
    let names = [
        "bethe.q_degree",
        "bethe.baxter",
        "bethe.root_sets",
        "bethe.bethe",
        "bethe.t_reconstruction",
        "bethe.cofactor_agreement",
        "bethe.cofactor_identities",
    ];
    let mut worst = 0.0f64;
    for (mode, n) in [(Mode::SadjSubvariety, 2), (Mode::SadjSubvariety, 3), (Mode::ChpRbar, 2)] {
        let r = run_suite(&config(mode, n, 61, Some(&[Stage::Spectrum, Stage::Bethe])));
        worst = worst.max(require(&format!("{mode:?} N={n}"), &r, &names)?);
        if r.spectrum.iter().any(|row| row.q.is_none()) {
            return Err(format!("{mode:?} N={n}: a line has no polynomial Q"));
        }
    }
    // the uniform rbar chain at N = 3 is degenerate inside Theta sectors; shown, not gated
    let r3 = run_suite(&config(Mode::ChpRbar, 3, 61, Some(&[Stage::Spectrum])));
    let rbar3 = match r3.check("spectrum.distinct") {
        Some(c) if c.pass => "simple".to_string(),
        Some(c) => c.note.clone().unwrap_or_else(|| "not simple".into()),
        None => "not run".into(),
    };
    Ok(format!("every line has polynomial Q, worst residual/tolerance {worst:.1e}; rbar N=3 spectrum: {rbar3}"))
}

fn criterion_7() -> Outcome {
    tolerance_is("chp.baxter", 1e-8, Bound::Upper)?;
    tolerance_is("chp.commutativity", 1e-9, Bound::Upper)?;
    tolerance_is("chp.theta", 1e-10, Bound::Upper)?;
    tolerance_is("chp_sadj.normality", 1e-8, Bound::Upper)?;
    tolerance_is("chp.eigen_map", 1e-7, Bound::Upper)?;
    let mut worst = 0.0f64;
    let inhomogeneous = ["chp.baxter", "chp.theta"];
    let mut site_dependent = 0.0f64;
    for n in [2, 3] {
        let r = run_suite(&config(Mode::Chp, n, 71, Some(&[Stage::Chp])));
        worst = worst.max(require(&format!("inhomogeneous N={n}"), &r, &inhomogeneous)?);
        site_dependent = site_dependent.max(r.metrics.get("chp.site_dependent_commutator").copied().unwrap_or(f64::NAN));
    }
    let uniform = ["chp.baxter", "chp.theta", "chp.commutativity", "chp.eigen_map", "chp.eigen_map_separation"];
    for n in [2, 3] {
        let r = run_suite(&uniform_chp(n, 72));
        worst = worst.max(require(&format!("uniform N={n}"), &r, &uniform)?);
    }
    let sadj = ["chp_sadj.normality", "chp_sadj.negative_control", "chp.commutativity", "chp.eigen_map"];
    tolerance_is("chp_sadj.negative_control", 0.1, Bound::Lower)?;
    let mut control = f64::INFINITY;
    for n in [2, 3] {
        let r = run_suite(&config(Mode::ChpSelfAdjoint, n, 73, Some(&[Stage::Chp, Stage::ChpSadj])));
        worst = worst.max(require(&format!("self-adjoint N={n}"), &r, &sadj)?);
        control = control.min(r.check("chp_sadj.negative_control").unwrap().residual);
    }
    let r = run_suite(&config(Mode::ChpRbar, 2, 74, Some(&[Stage::Chp, Stage::ChpRbar])));
    worst = worst.max(require("rbar N=2", &r, &["chp.commutativity", "chp.eigen_map", "chp_rbar.states"])?);
    let margin = *r.metrics.get("chp_rbar.average_ratio_margin").ok_or("rbar average-ratio margin not reported")?;
    if !margin.is_finite() {
        return Err(format!("rbar average-ratio margin {margin:e}"));
    }
    Ok(format!(
        "worst residual/tolerance {worst:.1e}, off-subvariety normality {control:.2}; \
         shown, not gated: rbar |ratio - 1| {margin:.2e}, [T, T'] with site-dependent q_n = r_n {site_dependent:.2e}"
    ))
}

fn criterion_8() -> Outcome {
    tolerance_is("baxterq.triangularity", 1e-9, Bound::Upper)?;
    tolerance_is("baxterq.baxter", 1e-8, Bound::Upper)?;
    tolerance_is("baxterq.average_identities", 1e-8, Bound::Upper)?;
    tolerance_is("baxterq.n_b", 1e-10, Bound::Upper)?;
    tolerance_is("baxterq.closure", 1e-9, Bound::Upper)?;
    tolerance_is("baxterq.omega", 1e-8, Bound::Upper)?;
    let names = [
        "baxterq.triangularity",
        "baxterq.baxter",
        "baxterq.average_identities",
        "baxterq.n_b",
        "baxterq.closure",
        "baxterq.omega",
    ];
    let mut worst = 0.0f64;
    let r2 = run_suite(&config(Mode::Baxterq, 2, 81, None));
    worst = worst.max(require("N=2", &r2, &names)?);
    let full = run_suite(&config(Mode::Baxterq, 3, 81, None));
    worst = worst.max(require("N=3", &full, &names)?);
    if !full.all_pass() {
        let f: Vec<_> = full.failures().map(|c| c.name.clone()).collect();
        return Err(format!("full suite at N=3 has failures: {}", f.join(", ")));
    }
    if full.metadata.wall_time_s >= 300.0 {
        return Err(format!("full suite at N=3 took {:.1} s", full.metadata.wall_time_s));
    }
    let t = Instant::now();
    let s4 = run_suite(&config(Mode::General, 4, 82, Some(&[Stage::Spectrum])));
    let t4 = t.elapsed().as_secs_f64();
    require("spectrum N=4", &s4, &["spectrum.count", "spectrum.distinct"])?;
    if t4 >= 600.0 {
        return Err(format!("N=4 spectrum took {t4:.1} s"));
    }
    Ok(format!(
        "worst residual/tolerance {worst:.1e}, full suite N=3 in {:.2} s, N=4 spectrum in {t4:.2} s",
        full.metadata.wall_time_s
    ))
}

fn criterion_9() -> Outcome {
    let modes = [Mode::General, Mode::SelfAdjoint, Mode::SadjSubvariety, Mode::Chp, Mode::ChpSelfAdjoint, Mode::ChpRbar, Mode::Baxterq];
    let pool = |threads: usize| rayon::ThreadPoolBuilder::new().num_threads(threads).build().expect("thread pool");
    let (one, four) = (pool(1), pool(4));
    for mode in modes {
        let cfg = config(mode, 2, 91, None);
        let a = one.install(|| run_suite(&cfg)).payload();
        let b = four.install(|| run_suite(&cfg)).payload();
        let c = four.install(|| run_suite(&cfg)).payload();
        if a != b || b != c {
            return Err(format!("{mode:?}: payload depends on the thread count or the run"));
        }
    }
    Ok(format!("{} modes bit-identical on 1 and 4 threads", modes.len()))
}

#[test]
fn acceptance() {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("algebraic backbone", criterion_1),
        ("quantum determinant", criterion_2),
        ("averages", criterion_3),
        ("separation of variables", criterion_4),
        ("spectrum completeness", criterion_5),
        ("polynomial Q and Bethe completeness", criterion_6),
        ("chiral Potts", criterion_7),
        ("generalized Q", criterion_8),
        ("determinism", criterion_9),
    ];
    let mut failed = Vec::new();
    for (i, (title, f)) in criteria.iter().enumerate() {
        match f() {
            Ok(detail) => println!("criterion {} PASS {title}: {detail}", i + 1),
            Err(why) => {
                println!("criterion {} FAIL {title}: {why}", i + 1);
                failed.push(i + 1);
            }
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
