//! Experiment driver: runs a config end to end and writes its artifacts.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use log::info;

use crate::adapters::{audit, ParamAudit};
use crate::error::{Result, RkrError};
use crate::gzsl::{generate_gzsl_tasks, run_gzsl_sequence, GzslReport, GzslTask, GzslVariant};
use crate::model::NetworkSpec;
use crate::train::{run_sequence, RunReport, SequenceOptions, SequenceRun, TaskDataset, Variant};

use super::checkpoint::{load_run, save_run};
use super::config::{DataSource, ExperimentConfig, GzslExperimentConfig};
use super::dataset::{load_gzsl_tasks, load_tasks, save_gzsl_tasks, save_tasks};
use super::io::{fmt_f64, write_atomic, write_json};
use super::synth::generate_synthetic_tasks;

pub const METRICS_JSON: &str = "metrics.json";
pub const METRICS_CSV: &str = "metrics.csv";
pub const AUDIT_JSON: &str = "param_audit.json";
pub const GZSL_METRICS_JSON: &str = "gzsl_metrics.json";
pub const GZSL_METRICS_CSV: &str = "gzsl_metrics.csv";

pub fn load_datasets(cfg: &ExperimentConfig) -> Result<Vec<TaskDataset>> {
    match &cfg.data {
        DataSource::Synthetic { spec } => generate_synthetic_tasks(spec),
        DataSource::Files { dir, tasks } => load_tasks(dir, *tasks),
    }
}

pub fn load_gzsl_data(cfg: &GzslExperimentConfig) -> Result<Vec<GzslTask>> {
    match &cfg.data {
        DataSource::Synthetic { spec } => generate_gzsl_tasks(spec),
        DataSource::Files { dir, tasks } => load_gzsl_tasks(dir, *tasks),
    }
}

/// `task,acc_during,acc_after,drift` rows, numbers formatted as in the JSON report.
pub fn metrics_csv(report: &RunReport) -> String {
    let mut out = String::from("task,acc_during,acc_after,drift\n");
    for t in &report.tasks {
        let _ = writeln!(out, "{},{},{},{}", t.task_id, fmt_f64(t.acc_during), fmt_f64(t.acc_after), fmt_f64(t.drift));
    }
    out
}

pub fn gzsl_metrics_csv(report: &GzslReport) -> String {
    let mut out = String::from("task,u_during,s_during,h_during,u_after,s_after,h_after,latent_drift\n");
    for t in &report.tasks {
        let (a, b) = (&t.at_completion, &t.after_sequence);
        let cells = [a.unseen, a.seen, a.harmonic, b.unseen, b.seen, b.harmonic, t.latent_drift].map(fmt_f64);
        let _ = writeln!(out, "{},{}", t.task_id, cells.join(","));
    }
    out
}

/// The JSON report without the wall-clock field, so reruns match byte for byte.
fn stable_json(report: &RunReport) -> Result<serde_json::Value> {
    let mut v = serde_json::to_value(report)?;
    if let Some(map) = v.as_object_mut() {
        map.remove("wall_clock_secs");
    }
    Ok(v)
}

/// Outcome of [`run_experiment`].
pub struct ExperimentOutcome {
    pub run: SequenceRun,
    pub out: PathBuf,
}

/// Runs the sequence, writes metrics, audit and checkpoints to `out`, then
/// fails with an invariant error if an rkr run shows any drift.
pub fn run_experiment(cfg: &ExperimentConfig, out: &Path) -> Result<ExperimentOutcome> {
    cfg.validate()?;
    let spec = cfg.network.build()?;
    let datasets = load_datasets(cfg)?;
    let variant = cfg.effective_variant();
    let opts = SequenceOptions {
        variant,
        forward_transfer: cfg.forward_transfer,
        train: cfg.train_configs(),
        seed: cfg.seed,
    };
    info!("running {} tasks, variant {}", datasets.len(), variant.as_str());
    let run = run_sequence(&spec, &datasets, &opts)?;
    fs::create_dir_all(out)?;
    write_json(&out.join("config.json"), cfg)?;
    write_json(&out.join(METRICS_JSON), &stable_json(&run.report)?)?;
    write_atomic(&out.join(METRICS_CSV), metrics_csv(&run.report).as_bytes())?;
    write_json(&out.join(AUDIT_JSON), &run.report.audit)?;
    save_run(out, &run)?;
    if variant != Variant::FinetuneBaseline && run.report.max_drift != 0.0 {
        return Err(RkrError::Invariant(format!("max probe drift {} on a retained task", run.report.max_drift)));
    }
    Ok(ExperimentOutcome { run, out: out.to_path_buf() })
}

pub struct GzslOutcome {
    pub report: GzslReport,
    pub out: PathBuf,
}

/// Runs the GZSL pipeline and writes `gzsl_metrics.json` and `gzsl_metrics.csv`.
pub fn run_gzsl_experiment(cfg: &GzslExperimentConfig, out: &Path) -> Result<GzslOutcome> {
    cfg.validate()?;
    let tasks = load_gzsl_data(cfg)?;
    let first = tasks.first().ok_or_else(|| RkrError::Config("no GZSL tasks".into()))?;
    let mut dims = cfg.dims.unwrap_or_default();
    dims.feature_dim = first.feature_dim();
    dims.embedding_dim = first.embedding_dim();
    if tasks.iter().any(|t| t.feature_dim() != dims.feature_dim || t.embedding_dim() != dims.embedding_dim) {
        return Err(RkrError::Config("GZSL tasks disagree on feature or embedding size".into()));
    }
    let run = run_gzsl_sequence(&tasks, dims, &cfg.train, cfg.variant, cfg.seed)?;
    fs::create_dir_all(out)?;
    write_json(&out.join("config.json"), cfg)?;
    write_json(&out.join(GZSL_METRICS_JSON), &run.report)?;
    write_atomic(&out.join(GZSL_METRICS_CSV), gzsl_metrics_csv(&run.report).as_bytes())?;
    if cfg.variant == GzslVariant::Rkr {
        if let Some(t) = run.report.tasks.iter().find(|t| t.at_completion != t.after_sequence || t.latent_drift != 0.0) {
            return Err(RkrError::Invariant(format!("GZSL task {} changed after later tasks", t.task_id)));
        }
    }
    Ok(GzslOutcome { report: run.report, out: out.to_path_buf() })
}

/// Writes a config's task data as RKRD files.
pub fn generate_data(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<PathBuf>> {
    save_tasks(out, &load_datasets(cfg)?)
}

pub fn generate_gzsl_data(cfg: &GzslExperimentConfig, out: &Path) -> Result<Vec<PathBuf>> {
    save_gzsl_tasks(out, &load_gzsl_data(cfg)?)
}

/// Parameter audit of a network at rank `rank`.
pub fn audit_network(spec: &NetworkSpec, rank: usize, lite: bool) -> Result<ParamAudit> {
    if rank == 0 {
        return Err(RkrError::Config("rank K must be positive".into()));
    }
    Ok(audit(&spec.inventory()?, rank, lite))
}

pub fn audit_table(a: &ParamAudit) -> String {
    let mut out = format!(
        "{:<12} {:<6} {:>10} {:>8} {:>8} {:>8} {:>8} {:>10}\n",
        "layer", "kind", "weights", "bias", "rect", "scale", "norm", "numerator"
    );
    for l in &a.layers {
        let numerator = l.closed_form_numerator.map_or_else(|| "-".to_string(), |n| n.to_string());
        let _ = writeln!(
            out,
            "{:<12} {:<6} {:>10} {:>8} {:>8} {:>8} {:>8} {:>10}",
            l.name, l.kind, l.base_weights, l.base_bias, l.rectification, l.scaling, l.per_task_norm, numerator
        );
    }
    let _ = writeln!(
        out,
        "K={} lite={} adapter={} base={} ({:.4}%) base+bias={} ({:.4}%)",
        a.rank,
        a.lite,
        a.adapter_total,
        a.base_without_bias,
        a.percent_excluding_bias,
        a.base_with_bias,
        a.percent_including_bias
    );
    for n in &a.notes {
        let _ = writeln!(out, "note: {n}");
    }
    out
}

/// Re-verifies a run directory and renders its metrics.
///
/// Every task is reloaded from its checkpoint and its probe batch re-run; for
/// adapter variants a mismatch with the recorded logits is an invariant error.
pub fn report(dir: &Path) -> Result<String> {
    let mut out = String::new();
    if dir.join(METRICS_CSV).exists() {
        let metrics: serde_json::Value = serde_json::from_slice(&fs::read(dir.join(METRICS_JSON))?)?;
        let variant = metrics.get("variant").and_then(|v| v.as_str()).unwrap_or("rkr").to_string();
        let (base, tasks) = load_run(dir)?;
        let _ = writeln!(out, "variant {variant}");
        let csv = fs::read_to_string(dir.join(METRICS_CSV))?;
        out.push_str(&render_csv(&csv));
        for t in &tasks {
            let drift = t.logits(&base, &t.probe_inputs)?.max_abs_diff(&t.probe_logits)? as f64;
            let _ = writeln!(out, "task {} reloaded probe drift {}", t.task_id, fmt_f64(drift));
            if variant != Variant::FinetuneBaseline.as_str() && drift != 0.0 {
                return Err(RkrError::Invariant(format!("task {} reloaded with drift {drift}", t.task_id)));
            }
        }
    }
    if dir.join(GZSL_METRICS_CSV).exists() {
        out.push_str("gzsl\n");
        out.push_str(&render_csv(&fs::read_to_string(dir.join(GZSL_METRICS_CSV))?));
    }
    if out.is_empty() {
        return Err(RkrError::Config(format!("{} holds no metrics", dir.display())));
    }
    Ok(out)
}

fn render_csv(csv: &str) -> String {
    let mut out = String::new();
    for line in csv.lines() {
        let cells: Vec<String> = line.split(',').map(|c| format!("{c:>14}")).collect();
        let _ = writeln!(out, "{}", cells.join(" "));
    }
    out
}
