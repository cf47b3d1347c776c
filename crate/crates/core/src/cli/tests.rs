use super::*;

fn minimal(mode: &str) -> String {
    format!(r#"{{"p_odd": 3, "p_prime": 2, "sites": {{"seed": 42}}, "mode": "{mode}"}}"#)
}

fn path_of(text: &str) -> String {
    RunConfig::from_json(text).unwrap_err().path().unwrap().to_string()
}

#[test]
fn minimal_config_defaults() {
    let cfg = RunConfig::from_json(&minimal("general")).unwrap();
    assert_eq!(cfg.n, 2);
    assert_eq!(cfg.epsilon, 1);
    assert_eq!(cfg.grid, Grid::default());
    assert_eq!(cfg.seed(), 42);
}

#[test]
fn parity_and_field_paths() {
    assert_eq!(path_of(r#"{"p_odd": 4, "p_prime": 2, "sites": {"seed": 1}, "mode": "general"}"#), "p_odd");
    assert_eq!(path_of(r#"{"p_odd": 3, "p_prime": 3, "sites": {"seed": 1}, "mode": "general"}"#), "p_prime");
    assert_eq!(path_of(r#"{"p_odd": 3, "p_prime": 6, "sites": {"seed": 1}, "mode": "general"}"#), "p_prime");
    assert_eq!(path_of(r#"{"p_odd": 3, "p_prime": 2, "mode": "chp", "chp": {"seed": 3}}"#), "chp.k");
    assert_eq!(path_of(r#"{"p_odd": 3, "p_prime": 2, "mode": "chp"}"#), "chp");
    assert_eq!(path_of(r#"{"p_odd": 3, "p_prime": 2, "sites": {"seed": 1}, "mode": "general", "epsilon": 2}"#), "epsilon");
    assert_eq!(path_of(r#"{"p_odd": 3, "p_prime": 2, "sites": {"seed": 1}, "mode": "general", "grid": {"radius": "x"}}"#), "grid.radius");
    assert_eq!(path_of(r#"{"p_odd": 3, "p_prime": 2, "sites": {"seed": 1}, "mode": "general", "tolerances": {"nope": 1.0}}"#), "tolerances.nope");
    assert_eq!(path_of(r#"{"p_odd": 3, "p_prime": 2, "sites": {"seed": 1}, "mode": "sideways"}"#), "mode");
    assert_eq!(path_of(r#"{"p_odd": 3, "p_prime": 2, "mode": "general"}"#), "sites");
    assert_eq!(path_of(r#"{"p_odd": 3, "p_prime": 2, "sites": {"seed": 1}, "mode": "general", "N": 9}"#), "N");
    assert_eq!(
        path_of(r#"{"p_odd": 3, "p_prime": 2, "mode": "chp_self_adjoint", "epsilon": -1, "chp": {"seed": 1, "k": [0.3, 0.0]}}"#),
        "chp.k"
    );
    assert_eq!(path_of(r#"{"p_odd": 3, "p_prime": 2, "sites": {"seed": 1}, "mode": "general", "stages": ["chp"]}"#), "stages[0]");
}

#[test]
fn explicit_sites_are_checked() {
    let ok = r#"{"p_odd": 3, "p_prime": 2, "N": 1, "mode": "general", "sites": [
        {"alpha": [1.0, 0.0], "beta": [0.5, 0.5], "gamma": [0.6, 0.0], "delta": [2.0, 0.0],
         "a": [0.6, 0.0], "b": [1.0, 1.0], "c": [1.0, 0.0], "d": [1.0, 0.0]}]}"#;
    RunConfig::from_json(ok).unwrap();
    let bad = ok.replace(r#""gamma": [0.6, 0.0]"#, r#""gamma": [0.7, 0.0]"#);
    assert_eq!(path_of(&bad), "sites[0]");
}

#[test]
fn sample_configs_validate() {
    for mode in [Mode::General, Mode::SelfAdjoint, Mode::SadjSubvariety, Mode::Chp, Mode::ChpSelfAdjoint, Mode::ChpRbar, Mode::Baxterq] {
        let text = serde_json::to_string(&sample_config(mode)).unwrap();
        let cfg = RunConfig::from_json(&text).unwrap();
        assert_eq!(cfg, sample_config(mode));
    }
}

#[test]
fn registry_is_sorted_and_covers_every_stage() {
    let names: Vec<&str> = registered_checks().collect();
    assert!(names.windows(2).all(|w| w[0] < w[1]));
    for mode in [Mode::SadjSubvariety, Mode::Chp, Mode::ChpSelfAdjoint, Mode::ChpRbar, Mode::Baxterq] {
        let cfg = sample_config(mode);
        for s in [Stage::Model, Stage::Algebra, Stage::Qdet, Stage::Averages, Stage::Sov, Stage::Spectrum, Stage::Bethe, Stage::Chp, Stage::ChpSadj, Stage::ChpRbar, Stage::Baxterq] {
            for n in expected_checks(&cfg, s) {
                assert!(registry(n).is_some(), "{n}");
            }
        }
    }
}

fn quick(mode: &str, stages: &str) -> RunConfig {
    let text = format!(r#"{{"p_odd": 3, "p_prime": 2, "sites": {{"seed": 7}}, "mode": "{mode}", "stages": {stages}}}"#);
    RunConfig::from_json(&text).unwrap()
}

#[test]
fn every_enabled_check_appears_once() {
    let cfg = quick("sadj_subvariety", r#"["model", "algebra", "spectrum", "bethe"]"#);
    let rep = run_suite(&cfg);
    let mut want: Vec<&str> = cfg.enabled_stages().into_iter().flat_map(|s| expected_checks(&cfg, s)).collect();
    want.sort_unstable();
    let got: Vec<&str> = rep.checks.iter().map(|c| c.name.as_str()).collect();
    assert_eq!(got, want);
    assert!(rep.all_pass(), "{:?}", rep.failures().collect::<Vec<_>>());
    assert!(rep.spectrum.iter().all(|r| r.q.is_some()));
}

#[test]
fn setup_failure_fails_every_check_with_a_note() {
    // all-zero site: the parameter setup fails, nothing else can run
    let text = r#"{"p_odd": 3, "p_prime": 2, "N": 1, "mode": "general", "stages": ["model", "qdet"], "sites": [
        {"alpha": [0.0, 0.0], "beta": [1.0, 0.0], "gamma": [1.0, 0.0], "delta": [1.0, 0.0],
         "a": [0.0, 0.0], "b": [1.0, 0.0], "c": [1.0, 0.0], "d": [1.0, 0.0]}]}"#;
    let rep = run_suite(&RunConfig::from_json(text).unwrap());
    assert_eq!(rep.checks.len(), 2);
    assert!(rep.checks.iter().all(|c| !c.pass && c.note.is_some()));
}

#[test]
fn tolerance_override_flips_a_check() {
    let mut cfg = quick("general", r#"["qdet"]"#);
    assert!(run_suite(&cfg).all_pass());
    cfg.tolerances.insert("qdet.operator".into(), 0.0);
    cfg.validate().unwrap();
    let rep = run_suite(&cfg);
    let c = rep.check("qdet.operator").unwrap();
    assert_eq!(c.tolerance, 0.0);
    assert_eq!(c.pass, c.residual == 0.0);
}

#[test]
fn json_round_trip_and_determinism() {
    let cfg = quick("general", r#"["model", "averages", "spectrum"]"#);
    let rep = run_suite(&cfg);
    let dir = std::env::temp_dir().join(format!("tau2-report-{}", std::process::id()));
    let path = emit_report(&rep, Format::Json, &dir).unwrap();
    assert_eq!(load_report(&path).unwrap(), rep);
    assert_eq!(run_suite(&cfg).payload(), rep.payload());
    std::fs::remove_dir_all(dir).ok();
}

#[test]
fn csv_rows_and_header_only_when_empty() {
    let cfg = quick("sadj_subvariety", r#"["spectrum", "bethe"]"#);
    let rep = run_suite(&cfg);
    let mut buf = Vec::new();
    write_csv(&rep, &mut buf).unwrap();
    let mut rd = csv::Reader::from_reader(buf.as_slice());
    let header = rd.headers().unwrap().clone();
    assert_eq!(header.len(), 1 + 2 * 3 + 2 * 5 + 2);
    let rows: Vec<csv::StringRecord> = rd.records().map(|r| r.unwrap()).collect();
    assert_eq!(rows.len(), 9);
    for r in &rows {
        for col in [header.len() - 2, header.len() - 1] {
            let v: f64 = r[col].parse().unwrap();
            assert!(v.is_finite() && v >= 0.0);
        }
    }

    let empty = run_suite(&quick("general", r#"["qdet"]"#));
    assert!(empty.spectrum.is_empty());
    let mut buf = Vec::new();
    write_csv(&empty, &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert_eq!(text.lines().count(), 1);
    assert!(text.starts_with("k,t_0_re,t_0_im"));
}

#[test]
fn seed_override_reaches_every_sampler() {
    let mut cfg = sample_config(Mode::Chp);
    cfg.set_seed(9);
    assert_eq!(cfg.seed(), 9);
    assert_eq!(cfg.chp.as_ref().unwrap().seed, Some(9));
    let mut cfg = sample_config(Mode::General);
    cfg.set_seed(11);
    assert_eq!(cfg.sites, Some(Sites::Sampler(Sampler { seed: 11, moduli: [0.5, 2.0] })));
}
