//! `rkr`: command-line driver for continual-learning and GZSL experiments.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;
use rkr_core::gradsuite::run_gradient_suite;
use rkr_core::gzsl::GzslVariant;
use rkr_core::harness::io::write_json;
use rkr_core::harness::{
    audit_network, audit_table, generate_data, generate_gzsl_data, load_experiment, load_gzsl_experiment, report,
    resolve_out, run_experiment, run_gzsl_experiment, DataSource, NetworkConfig,
};
use rkr_core::model::{NetworkSpec, Preset};
use rkr_core::train::Variant;
use rkr_core::{Result, RkrError};

#[derive(Parser)]
#[command(name = "rkr", version, about = "Rectification-based continual learning experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// Experiment config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config's run seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; beats RKR_OUT and the config's `out`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the config's variant.
    #[arg(long)]
    variant: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Run a continual-learning sequence and write metrics and checkpoints.
    Run(RunArgs),
    /// Run the GZSL pipeline.
    GzslRun(RunArgs),
    /// Write a config's task data as RKRD files.
    GenData {
        #[arg(long)]
        config: PathBuf,
        /// Output directory for the dataset files.
        #[arg(long)]
        out: PathBuf,
        /// Overrides the generator seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Treat the config as a GZSL experiment.
        #[arg(long)]
        gzsl: bool,
    },
    /// Print the per-layer parameter audit of a network.
    Audit {
        /// Experiment config whose network, rank and lite flag are audited.
        #[arg(long, conflicts_with_all = ["spec", "preset"])]
        config: Option<PathBuf>,
        /// Network spec file (JSON).
        #[arg(long, conflicts_with = "preset")]
        spec: Option<PathBuf>,
        #[arg(long, requires = "input")]
        preset: Option<Preset>,
        /// Input shape, e.g. `8` or `16,16,1`.
        #[arg(long, value_delimiter = ',')]
        input: Option<Vec<usize>>,
        #[arg(long, default_value_t = 16)]
        feature_dim: usize,
        #[arg(long)]
        hidden: Option<usize>,
        /// Rank budget K.
        #[arg(long)]
        rank: Option<usize>,
        #[arg(long)]
        lite: bool,
        /// Write the audit JSON here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check every analytic gradient against central finite differences.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Write the per-gradient report JSON here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Reload a run directory, re-verify its probes and print its metrics.
    Report {
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match dispatch(Cli::parse().command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Run(a) => run(a),
        Command::GzslRun(a) => gzsl_run(a),
        Command::GenData { config, out, seed, gzsl } => gen_data(&config, &out, seed, gzsl),
        Command::Audit { config, spec, preset, input, feature_dim, hidden, rank, lite, out } => {
            let (network, rank, lite) = match (config, spec, preset) {
                (Some(path), _, _) => {
                    let cfg = load_experiment(&path)?;
                    let k = rank.unwrap_or(cfg.train_configs()[0].rank);
                    (cfg.network.build()?, k, lite || cfg.effective_variant() == Variant::RkrLite)
                }
                (None, Some(path), _) => {
                    let text = std::fs::read_to_string(&path)?;
                    let spec: NetworkSpec = serde_json::from_str(&text)
                        .map_err(|e| RkrError::Config(format!("{}: {e}", path.display())))?;
                    spec.plan()?;
                    (spec, rank.unwrap_or(2), lite)
                }
                (None, None, Some(preset)) => {
                    let input = input.unwrap_or_default();
                    let net = NetworkConfig::Preset { preset, input, feature_dim, hidden }.build()?;
                    (net, rank.unwrap_or(2), lite)
                }
                (None, None, None) => {
                    return Err(RkrError::Config("audit needs --config, --spec or --preset".into()))
                }
            };
            let a = audit_network(&network, rank, lite)?;
            print!("{}", audit_table(&a));
            match out {
                Some(p) => write_json(&p, &a),
                None => {
                    println!("{}", serde_json::to_string_pretty(&a)?);
                    Ok(())
                }
            }
        }
        Command::Gradcheck { seed, out } => {
            let reports = run_gradient_suite(seed)?;
            let mut worst = 0.0_f64;
            for r in &reports {
                println!("{:<40} {:>6} {:.3e} {}", r.name, r.checked, r.max_rel_err, if r.passed { "pass" } else { "FAIL" });
                worst = worst.max(r.max_rel_err);
            }
            println!("max relative error {worst:.3e} over {} gradients", reports.len());
            if let Some(p) = out {
                write_json(&p, &reports)?;
            }
            let failed = reports.iter().filter(|r| !r.passed).count();
            if failed > 0 {
                return Err(RkrError::Numerical(format!("{failed} gradients failed the finite-difference check")));
            }
            Ok(())
        }
        Command::Report { out } => {
            print!("{}", report(&out)?);
            Ok(())
        }
    }
}

fn run(a: RunArgs) -> Result<()> {
    let mut cfg = load_experiment(&a.config)?;
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(v) = &a.variant {
        cfg.variant = v.parse()?;
        cfg.validate()?;
    }
    let out = resolve_out(a.out.as_deref(), cfg.out.as_deref());
    let outcome = run_experiment(&cfg, &out)?;
    let r = &outcome.run.report;
    println!("task  acc_during  acc_after  drift");
    for t in &r.tasks {
        println!("{:>4}  {:>10.2}  {:>9.2}  {}", t.task_id, t.acc_during, t.acc_after, t.drift);
    }
    println!(
        "avg during {:.2} after {:.2}, adapter overhead {:.4}% per task",
        r.avg_acc_during, r.avg_acc_after, r.audit.percent_including_bias
    );
    info!("artifacts in {}", outcome.out.display());
    Ok(())
}

fn gzsl_run(a: RunArgs) -> Result<()> {
    let mut cfg = load_gzsl_experiment(&a.config)?;
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(v) = &a.variant {
        cfg.variant = v.parse::<GzslVariant>()?;
    }
    let out = resolve_out(a.out.as_deref(), cfg.out.as_deref());
    let outcome = run_gzsl_experiment(&cfg, &out)?;
    println!("task  U_during  S_during  H_during  U_after  S_after  H_after");
    for t in &outcome.report.tasks {
        let (d, f) = (&t.at_completion, &t.after_sequence);
        println!(
            "{:>4}  {:>8.2}  {:>8.2}  {:>8.2}  {:>7.2}  {:>7.2}  {:>7.2}",
            t.task_id, d.unseen, d.seen, d.harmonic, f.unseen, f.seen, f.harmonic
        );
    }
    let m = &outcome.report.memory;
    println!("parameters: {} stored vs {} for separate models", m.total, m.separate_models);
    info!("artifacts in {}", outcome.out.display());
    Ok(())
}

fn gen_data(config: &Path, out: &Path, seed: Option<u64>, gzsl: bool) -> Result<()> {
    let written = if gzsl {
        let mut cfg = load_gzsl_experiment(config)?;
        if let (Some(s), DataSource::Synthetic { spec }) = (seed, &mut cfg.data) {
            spec.seed = s;
        }
        generate_gzsl_data(&cfg, out)?
    } else {
        let mut cfg = load_experiment(config)?;
        if let (Some(s), DataSource::Synthetic { spec }) = (seed, &mut cfg.data) {
            spec.seed = s;
        }
        generate_data(&cfg, out)?
    };
    for p in &written {
        println!("{}", p.display());
    }
    Ok(())
}
