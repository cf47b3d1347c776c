use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use tau2::cli::{emit_report, load_config, run_suite, sample_config, write_csv, Format, Mode, RunConfig, RunReport, Stage};

#[derive(Parser)]
#[command(name = "tau2", version, about = "Verification suite for cyclic tau2 representations and chiral Potts transfer matrices")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run every stage of the configured mode.
    Verify(RunArgs),
    /// Spectrum table only (with Q and Bethe roots on subvariety modes).
    Spectrum(RunArgs),
    /// Chiral Potts checks of a chp mode.
    Chp(RunArgs),
    /// Generalized Q-operator checks.
    Baxterq(RunArgs),
    /// Print a complete configuration template.
    SampleConfig {
        #[arg(long, value_enum, default_value = "general")]
        mode: ModeArg,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    format: Option<FormatArg>,
    /// Overrides every seed of the configuration.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Json,
    Csv,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    General,
    SelfAdjoint,
    SadjSubvariety,
    Chp,
    ChpSelfAdjoint,
    ChpRbar,
    Baxterq,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Mode {
        match m {
            ModeArg::General => Mode::General,
            ModeArg::SelfAdjoint => Mode::SelfAdjoint,
            ModeArg::SadjSubvariety => Mode::SadjSubvariety,
            ModeArg::Chp => Mode::Chp,
            ModeArg::ChpSelfAdjoint => Mode::ChpSelfAdjoint,
            ModeArg::ChpRbar => Mode::ChpRbar,
            ModeArg::Baxterq => Mode::Baxterq,
        }
    }
}

fn init_threads() -> Result<(), String> {
    let Ok(v) = std::env::var("TAU2_THREADS") else { return Ok(()) };
    let n: usize = v.trim().parse().map_err(|_| format!("TAU2_THREADS={v} is not a thread count"))?;
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| e.to_string())
}

fn prepare(args: &RunArgs, stages: Option<fn(Mode) -> Result<Vec<Stage>, String>>) -> Result<RunConfig, String> {
    let mut cfg = load_config(&args.config).map_err(|e| e.to_string())?;
    if let Some(s) = args.seed {
        cfg.set_seed(s);
    }
    if let Some(f) = stages {
        cfg.stages = Some(f(cfg.mode)?);
    }
    cfg.validate().map_err(|e| e.to_string())?;
    Ok(cfg)
}

fn spectrum_stages(mode: Mode) -> Result<Vec<Stage>, String> {
    Ok(match mode {
        Mode::SadjSubvariety | Mode::ChpRbar => vec![Stage::Spectrum, Stage::Bethe],
        _ => vec![Stage::Spectrum],
    })
}

fn chp_stages(mode: Mode) -> Result<Vec<Stage>, String> {
    match mode {
        Mode::Chp => Ok(vec![Stage::Chp]),
        Mode::ChpSelfAdjoint => Ok(vec![Stage::Chp, Stage::ChpSadj]),
        Mode::ChpRbar => Ok(vec![Stage::Chp, Stage::ChpRbar]),
        _ => Err("mode: the chp subcommand needs chp, chp_self_adjoint or chp_rbar".into()),
    }
}

fn baxterq_stages(_: Mode) -> Result<Vec<Stage>, String> {
    Ok(vec![Stage::Baxterq])
}

fn emit(report: &RunReport, cfg: &RunConfig, args: &RunArgs) -> Result<(), String> {
    let format = match args.format {
        Some(FormatArg::Json) => Format::Json,
        Some(FormatArg::Csv) => Format::Csv,
        None => cfg.output.format.unwrap_or(Format::Json),
    };
    match args.out.as_ref().or(cfg.output.dir.as_ref()) {
        Some(dir) => {
            let path = emit_report(report, format, dir).map_err(|e| e.to_string())?;
            eprintln!("wrote {}", path.display());
        }
        None => match format {
            Format::Json => println!("{}", serde_json::to_string_pretty(report).map_err(|e| e.to_string())?),
            Format::Csv => write_csv(report, std::io::stdout().lock()).map_err(|e| e.to_string())?,
        },
    }
    Ok(())
}

fn run(args: &RunArgs, stages: Option<fn(Mode) -> Result<Vec<Stage>, String>>) -> Result<bool, String> {
    let cfg = prepare(args, stages)?;
    let report = run_suite(&cfg);
    emit(&report, &cfg, args)?;
    let failed: Vec<_> = report.failures().collect();
    for c in &failed {
        eprintln!("FAIL {} residual {:.3e} tolerance {:.1e}{}", c.name, c.residual, c.tolerance, c.note.as_deref().map(|n| format!(" ({n})")).unwrap_or_default());
    }
    eprintln!("{} checks, {} failed, {:.2} s", report.checks.len(), failed.len(), report.metadata.wall_time_s);
    Ok(failed.is_empty())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = init_threads() {
        eprintln!("error: {e}");
        return ExitCode::from(2);
    }
    let outcome = match &cli.cmd {
        Cmd::Verify(a) => run(a, None),
        Cmd::Spectrum(a) => run(a, Some(spectrum_stages)),
        Cmd::Chp(a) => run(a, Some(chp_stages)),
        Cmd::Baxterq(a) => run(a, Some(baxterq_stages)),
        Cmd::SampleConfig { mode, out } => {
            let text = serde_json::to_string_pretty(&sample_config((*mode).into())).expect("config serializes");
            match out {
                Some(p) => std::fs::write(p, text + "\n").map(|_| true).map_err(|e| format!("cannot write {}: {e}", p.display())),
                None => {
                    println!("{text}");
                    Ok(true)
                }
            }
        }
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
