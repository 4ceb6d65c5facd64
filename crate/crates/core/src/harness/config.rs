//! Experiment configuration files.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Result, RkrError};
use crate::gzsl::{CadaDims, GzslSynthSpec, GzslTrainConfig, GzslVariant};
use crate::model::{build_reference_net, NetworkSpec, Preset};
use crate::train::{TrainConfig, Variant};

use super::synth::SynthSpec;

/// Environment variable that overrides the output directory.
pub const OUT_ENV: &str = "RKR_OUT";
pub const DEFAULT_OUT: &str = "rkr_out";

fn yes() -> bool {
    true
}
fn default_variant() -> Variant {
    Variant::Rkr
}
fn default_gzsl_variant() -> GzslVariant {
    GzslVariant::Rkr
}

/// Network description: a preset with its sizes, or an explicit layer list.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum NetworkConfig {
    Preset {
        preset: Preset,
        input: Vec<usize>,
        feature_dim: usize,
        #[serde(default)]
        hidden: Option<usize>,
    },
    Spec {
        spec: NetworkSpec,
    },
}

impl NetworkConfig {
    pub fn build(&self) -> Result<NetworkSpec> {
        let spec = match self {
            NetworkConfig::Preset { preset, input, feature_dim, hidden } => {
                build_reference_net(*preset, input, *feature_dim, *hidden)?
            }
            NetworkConfig::Spec { spec } => spec.clone(),
        };
        spec.plan()?;
        Ok(spec)
    }
}

/// Where task data comes from. Relative `dir`s resolve against the config file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DataSource<S> {
    Synthetic {
        #[serde(flatten)]
        spec: S,
    },
    Files {
        dir: PathBuf,
        #[serde(default)]
        tasks: Option<usize>,
    },
}

impl<S> DataSource<S> {
    fn resolve(&mut self, base: &Path) {
        if let DataSource::Files { dir, .. } = self {
            if dir.is_relative() {
                *dir = base.join(&*dir);
            }
        }
    }
}

/// A continual-learning experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_variant")]
    pub variant: Variant,
    pub network: NetworkConfig,
    /// Rank budget K; overrides every per-task value when set.
    #[serde(default)]
    pub rank: Option<usize>,
    /// Switches `rkr` to `rkr_lite`.
    #[serde(default)]
    pub lite: bool,
    #[serde(default = "yes")]
    pub forward_transfer: bool,
    /// One config per task; the last one repeats. Empty means defaults.
    #[serde(default)]
    pub train: Vec<TrainConfig>,
    pub data: DataSource<SynthSpec>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub out: Option<PathBuf>,
}

impl ExperimentConfig {
    /// The variant after applying the `lite` flag.
    pub fn effective_variant(&self) -> Variant {
        match (self.variant, self.lite) {
            (Variant::Rkr, true) => Variant::RkrLite,
            (v, _) => v,
        }
    }

    /// Per-task configs with the rank override applied.
    pub fn train_configs(&self) -> Vec<TrainConfig> {
        let mut cfgs = if self.train.is_empty() { vec![TrainConfig::default()] } else { self.train.clone() };
        if let Some(k) = self.rank {
            cfgs.iter_mut().for_each(|c| c.rank = k);
        }
        cfgs
    }

    pub fn validate(&self) -> Result<()> {
        self.network.build()?;
        let cfgs = self.train_configs();
        for c in &cfgs {
            c.validate()?;
        }
        if cfgs.iter().any(|c| c.rank != cfgs[0].rank) {
            return Err(RkrError::Config("every task must use the same rank K".into()));
        }
        if self.lite && self.variant == Variant::FinetuneBaseline {
            return Err(RkrError::Config("lite applies to rkr only".into()));
        }
        Ok(())
    }
}

/// A GZSL experiment. Feature and embedding sizes are taken from the data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GzslExperimentConfig {
    #[serde(default = "default_gzsl_variant")]
    pub variant: GzslVariant,
    #[serde(default)]
    pub dims: Option<CadaDims>,
    #[serde(default)]
    pub train: GzslTrainConfig,
    pub data: DataSource<GzslSynthSpec>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub out: Option<PathBuf>,
}

impl GzslExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.train.validate()
    }
}

fn parse<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)
        .map_err(|e| RkrError::Config(format!("cannot read config {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| RkrError::Config(format!("{}: {e}", path.display())))
}

fn config_dir(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

pub fn load_experiment(path: &Path) -> Result<ExperimentConfig> {
    let mut cfg: ExperimentConfig = parse(path)?;
    cfg.data.resolve(&config_dir(path));
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_gzsl_experiment(path: &Path) -> Result<GzslExperimentConfig> {
    let mut cfg: GzslExperimentConfig = parse(path)?;
    cfg.data.resolve(&config_dir(path));
    cfg.validate()?;
    Ok(cfg)
}

/// Output directory: explicit flag, then `RKR_OUT`, then the config, then `rkr_out`.
pub fn resolve_out(flag: Option<&Path>, config: Option<&Path>) -> PathBuf {
    if let Some(p) = flag {
        return p.to_path_buf();
    }
    if let Some(p) = std::env::var_os(OUT_ENV).filter(|v| !v.is_empty()) {
        return PathBuf::from(p);
    }
    config.map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from(DEFAULT_OUT))
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "network": {"kind": "preset", "preset": "tiny-mlp", "input": [16], "feature_dim": 8},
        "data": {"kind": "synthetic", "tasks": 2, "classes_per_task": 2, "input_shape": [16],
                 "separation": 6.0, "train_per_class": 10, "test_per_class": 5}
    }"#;

    #[test]
    fn minimal_config_gets_defaults() {
        let cfg: ExperimentConfig = serde_json::from_str(MINIMAL).unwrap();
        assert_eq!(cfg.variant, Variant::Rkr);
        assert!(cfg.forward_transfer);
        assert_eq!(cfg.train_configs(), vec![TrainConfig::default()]);
        cfg.validate().unwrap();
        let DataSource::Synthetic { spec } = &cfg.data else { panic!("expected synthetic data") };
        assert!(spec.conflict_mode);
    }

    #[test]
    fn config_round_trips() {
        let cfg: ExperimentConfig = serde_json::from_str(MINIMAL).unwrap();
        let back: ExperimentConfig = serde_json::from_str(&serde_json::to_string(&cfg).unwrap()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn rank_override_and_lite() {
        let mut cfg: ExperimentConfig = serde_json::from_str(MINIMAL).unwrap();
        cfg.rank = Some(5);
        cfg.lite = true;
        assert!(cfg.train_configs().iter().all(|c| c.rank == 5));
        assert_eq!(cfg.effective_variant(), Variant::RkrLite);
    }

    #[test]
    fn unknown_layer_kind_is_rejected() {
        let text = r#"{"network": {"kind": "spec", "spec": {"input": [4], "layers": [{"kind": "lstm"}]}},
                       "data": {"kind": "files", "dir": "x"}}"#;
        assert!(serde_json::from_str::<ExperimentConfig>(text).is_err());
    }

    #[test]
    fn flag_beats_config_for_out() {
        assert_eq!(resolve_out(Some(Path::new("a")), Some(Path::new("b"))), PathBuf::from("a"));
    }
}
