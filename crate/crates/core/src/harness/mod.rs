//! Operational shell: synthetic data, dataset and checkpoint files, configs and the experiment driver.

pub mod checkpoint;
pub mod config;
pub mod dataset;
pub mod driver;
pub mod io;
pub mod synth;

pub use checkpoint::{load_run, save_run, Checkpoint, RestoredTask};
pub use config::{
    load_experiment, load_gzsl_experiment, resolve_out, DataSource, ExperimentConfig, GzslExperimentConfig,
    NetworkConfig, OUT_ENV,
};
pub use dataset::{load_gzsl_tasks, load_tasks, read_dataset, save_gzsl_tasks, save_tasks, write_dataset, DatasetFile, DatasetHeader};
pub use driver::{
    audit_network, audit_table, generate_data, generate_gzsl_data, metrics_csv, report, run_experiment,
    run_gzsl_experiment, ExperimentOutcome, GzslOutcome,
};
pub use synth::{generate_synthetic_tasks, SynthSpec};
