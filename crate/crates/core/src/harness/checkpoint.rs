//! Checkpoint files and run directories.
//!
//! A checkpoint file is the magic `RKRC`, a little-endian `u32` manifest
//! length, a JSON manifest, then one section per tensor: a little-endian
//! `u64` byte length followed by that many bytes of little-endian `f64`
//! values. The manifest carries the SHA-256 of all sections.
//!
//! A run directory holds `base/` (weights, spec, checksum) and one
//! `task_<t>/` per task (adapters or head, probe batch and logits, metrics).

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::adapters::{generator_kinds, Head, LayerAdapter, RectificationGenerator, ScalingFactorGenerator, TaskAdapterSet};
use crate::error::{Result, RkrError};
use crate::model::{BaseNetwork, LayerParams, NetworkSpec};
use crate::tensor::{Param, Scalar, Tensor};
use crate::train::{SequenceRun, TaskState};

use super::io::{write_atomic, write_json};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"RKRC";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub version: u32,
    /// `base`, `adapters`, `head` or `probe`.
    pub kind: String,
    #[serde(default)]
    pub task_id: Option<usize>,
    #[serde(default)]
    pub rank: Option<usize>,
    #[serde(default)]
    pub lite: Option<bool>,
    pub tensors: Vec<TensorEntry>,
    pub sha256: String,
}

/// Named tensors plus their manifest.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub manifest: CheckpointManifest,
    pub tensors: Vec<Tensor>,
}

fn fmt_err(msg: impl Into<String>) -> RkrError {
    RkrError::Format(msg.into())
}

fn sections(tensors: &[Tensor]) -> Vec<u8> {
    let mut out = Vec::new();
    for t in tensors {
        out.extend_from_slice(&(8 * t.len() as u64).to_le_bytes());
        for &v in t.data() {
            out.extend_from_slice(&(v as f64).to_le_bytes());
        }
    }
    out
}

impl Checkpoint {
    pub fn new(kind: &str, named: Vec<(String, Tensor)>) -> Self {
        let (names, tensors): (Vec<String>, Vec<Tensor>) = named.into_iter().unzip();
        let entries = names
            .into_iter()
            .zip(&tensors)
            .map(|(name, t)| TensorEntry { name, shape: t.shape().to_vec() })
            .collect();
        let sha256 = hex::encode(Sha256::digest(sections(&tensors)));
        let manifest = CheckpointManifest {
            version: CHECKPOINT_VERSION,
            kind: kind.into(),
            task_id: None,
            rank: None,
            lite: None,
            tensors: entries,
            sha256,
        };
        Self { manifest, tensors }
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.manifest
            .tensors
            .iter()
            .position(|e| e.name == name)
            .map(|i| &self.tensors[i])
            .ok_or_else(|| fmt_err(format!("{} checkpoint has no tensor {name:?}", self.manifest.kind)))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let manifest = serde_json::to_vec(&self.manifest)?;
        let len = u32::try_from(manifest.len()).map_err(|_| fmt_err("manifest too large"))?;
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(&manifest);
        out.extend_from_slice(&sections(&self.tensors));
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 8 || &bytes[..4] != CHECKPOINT_MAGIC {
            return Err(fmt_err("missing RKRC magic"));
        }
        let len = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes")) as usize;
        let body = bytes.get(8..8 + len).ok_or_else(|| fmt_err("truncated manifest"))?;
        let manifest: CheckpointManifest =
            serde_json::from_slice(body).map_err(|e| fmt_err(format!("bad manifest: {e}")))?;
        if manifest.version != CHECKPOINT_VERSION {
            return Err(fmt_err(format!("unsupported checkpoint version {}", manifest.version)));
        }
        let payload = &bytes[8 + len..];
        if hex::encode(Sha256::digest(payload)) != manifest.sha256 {
            return Err(fmt_err("checkpoint content does not match its checksum"));
        }
        let mut rest = payload;
        let mut tensors = Vec::with_capacity(manifest.tensors.len());
        for entry in &manifest.tensors {
            let n: usize = entry.shape.iter().product();
            if rest.len() < 8 {
                return Err(fmt_err(format!("section {} is truncated", entry.name)));
            }
            let declared = u64::from_le_bytes(rest[..8].try_into().expect("8 bytes")) as usize;
            if declared != 8 * n || rest.len() < 8 + declared {
                return Err(fmt_err(format!("section {} has the wrong length", entry.name)));
            }
            let data: Vec<Scalar> = rest[8..8 + declared]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")) as Scalar)
                .collect();
            tensors.push(Tensor::new(&entry.shape, data)?);
            rest = &rest[8 + declared..];
        }
        if !rest.is_empty() {
            return Err(fmt_err("trailing bytes after the last section"));
        }
        Ok(Self { manifest, tensors })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?).map_err(|e| match e {
            RkrError::Format(m) => RkrError::Format(format!("{}: {m}", path.display())),
            other => other,
        })
    }
}

fn head_tensors(head: &Head) -> Vec<(String, Tensor)> {
    vec![("head.weight".into(), head.weight.value.clone()), ("head.bias".into(), head.bias.value.clone())]
}

fn frozen(t: &Tensor) -> Param {
    let mut p = Param::new(t.clone());
    p.freeze();
    p
}

fn head_from(ck: &Checkpoint) -> Result<Head> {
    Ok(Head { weight: frozen(ck.get("head.weight")?), bias: frozen(ck.get("head.bias")?) })
}

pub fn base_checkpoint(base: &BaseNetwork) -> Checkpoint {
    let mut named = Vec::new();
    for (i, lp) in base.layer_params().iter().enumerate() {
        if let Some(lp) = lp {
            named.push((format!("layer{i}.weight"), lp.weight.value.clone()));
            named.push((format!("layer{i}.bias"), lp.bias.value.clone()));
        }
    }
    Checkpoint::new("base", named)
}

pub fn base_from_checkpoint(spec: &NetworkSpec, ck: &Checkpoint) -> Result<BaseNetwork> {
    let plan = spec.plan()?;
    let params = plan
        .iter()
        .enumerate()
        .map(|(i, p)| match p.target() {
            Some(_) => Ok(Some(LayerParams {
                weight: frozen(ck.get(&format!("layer{i}.weight"))?),
                bias: frozen(ck.get(&format!("layer{i}.bias"))?),
            })),
            None => Ok(None),
        })
        .collect::<Result<Vec<_>>>()?;
    let mut base = BaseNetwork::from_params(spec, params)?;
    base.freeze();
    Ok(base)
}

pub fn adapter_checkpoint(set: &TaskAdapterSet) -> Checkpoint {
    let mut named = Vec::new();
    for l in &set.layers {
        let i = l.target.layer;
        if let Some(r) = &l.rect {
            let [lm, rm] = r.params();
            named.push((format!("layer{i}.lm"), lm.value.clone()));
            named.push((format!("layer{i}.rm"), rm.value.clone()));
        }
        if let Some(s) = &l.scale {
            named.push((format!("layer{i}.scale"), s.factors.value.clone()));
        }
    }
    named.extend(head_tensors(&set.head));
    let mut ck = Checkpoint::new("adapters", named);
    ck.manifest.task_id = Some(set.task_id);
    ck.manifest.rank = Some(set.rank);
    ck.manifest.lite = Some(set.lite);
    ck
}

/// Rebuilds a finalized adapter set for `base` from its checkpoint.
pub fn adapters_from_checkpoint(base: &BaseNetwork, ck: &Checkpoint) -> Result<TaskAdapterSet> {
    let m = &ck.manifest;
    let (Some(task_id), Some(rank), Some(lite)) = (m.task_id, m.rank, m.lite) else {
        return Err(fmt_err("adapter checkpoint lacks task id, rank or lite flag"));
    };
    let mut layers = Vec::new();
    for target in base.spec().adaptable_targets()? {
        let i = target.layer;
        let (has_rect, has_scale) = generator_kinds(&target.shape, lite);
        let rect = if has_rect {
            let mut g = RectificationGenerator::from_factors(
                target.shape,
                ck.get(&format!("layer{i}.lm"))?.clone(),
                ck.get(&format!("layer{i}.rm"))?.clone(),
            )?;
            if g.rank() != rank {
                return Err(fmt_err(format!("layer {i}: factors have rank {} but manifest says {rank}", g.rank())));
            }
            g.params_mut().into_iter().for_each(|p| p.freeze());
            Some(g)
        } else {
            None
        };
        let scale = if has_scale {
            let mut s = ScalingFactorGenerator::from_factors(ck.get(&format!("layer{i}.scale"))?.clone())?;
            s.factors.freeze();
            Some(s)
        } else {
            None
        };
        layers.push(LayerAdapter { target, rect, scale });
    }
    Ok(TaskAdapterSet::from_parts(task_id, rank, lite, layers, head_from(ck)?, true))
}

/// A task restored from a run directory.
#[derive(Clone, Debug)]
pub struct RestoredTask {
    pub task_id: usize,
    pub adapters: Option<TaskAdapterSet>,
    pub head: Head,
    pub probe_inputs: Tensor,
    pub probe_logits: Tensor,
}

impl RestoredTask {
    pub fn logits(&self, base: &BaseNetwork, input: &Tensor) -> Result<Tensor> {
        Ok(base.forward(self.adapters.as_ref(), &self.head, input, None)?.0)
    }
}

fn task_dir(dir: &Path, task_id: usize) -> std::path::PathBuf {
    dir.join(format!("task_{task_id}"))
}

/// Writes `base/` and every `task_<t>/` of a finished run.
pub fn save_run(dir: &Path, run: &SequenceRun) -> Result<()> {
    let base_dir = dir.join("base");
    base_checkpoint(&run.base).save(&base_dir.join("weights.rkrc"))?;
    write_json(&base_dir.join("spec.json"), run.base.spec())?;
    write_atomic(&base_dir.join("checksum.txt"), format!("{}\n", run.base.checksum()).as_bytes())?;
    for (state, report) in run.tasks.iter().zip(&run.report.tasks) {
        save_task(&task_dir(dir, state.task_id), state)?;
        write_json(&task_dir(dir, state.task_id).join("metrics.json"), report)?;
    }
    Ok(())
}

fn save_task(dir: &Path, state: &TaskState) -> Result<()> {
    match &state.adapters {
        Some(set) => adapter_checkpoint(set).save(&dir.join("adapters.rkrc"))?,
        None => {
            let mut ck = Checkpoint::new("head", head_tensors(state.head()));
            ck.manifest.task_id = Some(state.task_id);
            ck.save(&dir.join("head.rkrc"))?
        }
    }
    let mut probe = Checkpoint::new(
        "probe",
        vec![("inputs".into(), state.probe_inputs.clone()), ("logits".into(), state.probe_logits.clone())],
    );
    probe.manifest.task_id = Some(state.task_id);
    probe.save(&dir.join("probe.rkrc"))
}

/// Loads the base network and every task of a run directory.
pub fn load_run(dir: &Path) -> Result<(BaseNetwork, Vec<RestoredTask>)> {
    let base_dir = dir.join("base");
    let spec: NetworkSpec = serde_json::from_slice(&fs::read(base_dir.join("spec.json"))?)?;
    let base = base_from_checkpoint(&spec, &Checkpoint::load(&base_dir.join("weights.rkrc"))?)?;
    let recorded = fs::read_to_string(base_dir.join("checksum.txt"))?;
    if recorded.trim() != base.checksum() {
        return Err(RkrError::Invariant("stored base weights do not match the recorded checksum".into()));
    }
    let mut tasks = Vec::new();
    for task_id in (1..).take_while(|&t| task_dir(dir, t).is_dir()) {
        let td = task_dir(dir, task_id);
        let (adapters, head) = if td.join("adapters.rkrc").exists() {
            let set = adapters_from_checkpoint(&base, &Checkpoint::load(&td.join("adapters.rkrc"))?)?;
            let head = set.head.clone();
            (Some(set), head)
        } else {
            (None, head_from(&Checkpoint::load(&td.join("head.rkrc"))?)?)
        };
        let probe = Checkpoint::load(&td.join("probe.rkrc"))?;
        tasks.push(RestoredTask {
            task_id,
            adapters,
            head,
            probe_inputs: probe.get("inputs")?.clone(),
            probe_logits: probe.get("logits")?.clone(),
        });
    }
    Ok((base, tasks))
}
