//! The task-incremental protocol.
//!
//! Task 1 trains the whole network and its head, after which the base is
//! frozen. Each later task trains only its adapter set (generators and head).
//! Tasks are evaluated with their own adapters, i.e. with task labels known.

use std::time::Instant;

use log::{debug, info};
use serde::{Deserialize, Serialize};

use crate::adapters::{audit, init_adapter_set, Head, ParamAudit, TaskAdapterSet};
use crate::error::{Result, RkrError};
use crate::model::{accumulate_adapters, accumulate_head, BaseNetwork, NetworkSpec};
use crate::ops::{argmax, batch_cross_entropy};
use crate::rng::SeededRng;
use crate::tensor::{Param, Tensor};

use super::data::{check_disjoint, Split, TaskDataset};
use super::optim::{MilestoneSchedule, Sgd};

fn default_momentum() -> f64 {
    0.9
}
fn default_gamma() -> f64 {
    0.1
}
fn default_rank() -> usize {
    2
}

/// Optimization settings for one task.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    #[serde(default)]
    pub milestones: Vec<usize>,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    /// Applied to base-network training only; adapter params never decay.
    #[serde(default)]
    pub weight_decay: f64,
    #[serde(default = "default_rank")]
    pub rank: usize,
    #[serde(default)]
    pub lite: bool,
    #[serde(default)]
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 32,
            lr: 0.01,
            momentum: 0.9,
            milestones: vec![15, 25],
            gamma: 0.1,
            weight_decay: 0.0,
            rank: 2,
            lite: false,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn schedule(&self) -> MilestoneSchedule {
        MilestoneSchedule { initial: self.lr, milestones: self.milestones.clone(), gamma: self.gamma }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(RkrError::Config("epochs and batch size must be positive".into()));
        }
        if self.rank == 0 {
            return Err(RkrError::Config("rank K must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(RkrError::Config(format!("momentum {} outside [0, 1)", self.momentum)));
        }
        self.schedule().validate(self.epochs)
    }
}

/// Loss trajectory of one task's training.
#[derive(Clone, Debug, Default, Serialize)]
pub struct TrainLog {
    /// Mean training loss before the first update.
    pub initial_loss: f64,
    pub epoch_losses: Vec<f64>,
    /// Mean training loss after the last update.
    pub final_loss: f64,
    /// Σ over steps of the squared gradient norm that reached base params.
    pub base_grad_norm_sq: f64,
}

/// Mean cross-entropy over a split, evaluated in chunks.
fn mean_loss(base: &BaseNetwork, adapters: Option<&TaskAdapterSet>, head: &Head, split: &Split, labels: &[usize]) -> Result<f64> {
    let mut total = 0.0;
    for start in (0..split.len()).step_by(256) {
        let idx: Vec<usize> = (start..(start + 256).min(split.len())).collect();
        let (logits, _) = base.forward(adapters, head, &split.inputs.gather_rows(&idx), None)?;
        let y: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
        let (l, _) = batch_cross_entropy(&logits, &y)?;
        total += l as f64 * idx.len() as f64;
    }
    Ok(total / split.len() as f64)
}

/// Shuffled mini-batch epochs; `step` receives inputs, local labels and the
/// epoch's learning rate and returns the batch loss.
fn run_epochs<F>(split: &Split, labels: &[usize], cfg: &TrainConfig, rng: &mut SeededRng, mut step: F) -> Result<Vec<f64>>
where
    F: FnMut(&Tensor, &[usize], f64) -> Result<f64>,
{
    if split.is_empty() {
        return Err(RkrError::Config("empty training split".into()));
    }
    let schedule = cfg.schedule();
    let mut order: Vec<usize> = (0..split.len()).collect();
    let mut losses = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        rng.shuffle(&mut order);
        let lr = schedule.rate(epoch);
        let mut sum = 0.0;
        for (batch, idx) in order.chunks(cfg.batch_size).enumerate() {
            let x = split.inputs.gather_rows(idx);
            let y: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
            let loss = step(&x, &y, lr)?;
            if !loss.is_finite() {
                return Err(RkrError::Divergence { epoch, batch, loss });
            }
            sum += loss * idx.len() as f64;
        }
        let mean = sum / split.len() as f64;
        debug!("epoch {epoch}: lr {lr:.2e}, loss {mean:.5}");
        losses.push(mean);
    }
    Ok(losses)
}

fn zero_grads(params: &mut [&mut Param]) {
    for p in params.iter_mut() {
        p.zero_grad();
    }
}

/// Trains every base parameter jointly with a fresh task head, then freezes the base.
pub fn train_base_task(spec: &NetworkSpec, data: &TaskDataset, cfg: &TrainConfig, rng: &mut SeededRng) -> Result<(BaseNetwork, Head, TrainLog)> {
    let mut base = BaseNetwork::init(spec, rng)?;
    let mut head = Head::fresh(base.feature_dim(), data.num_classes(), rng);
    let log = fit_shared(&mut base, &mut head, data, cfg, rng)?;
    base.freeze();
    head.weight.freeze();
    head.bias.freeze();
    Ok((base, head, log))
}

/// Trains an unfrozen network together with `head` (base task and the
/// sequential fine-tuning baseline).
fn fit_shared(base: &mut BaseNetwork, head: &mut Head, data: &TaskDataset, cfg: &TrainConfig, rng: &mut SeededRng) -> Result<TrainLog> {
    cfg.validate()?;
    let labels = data.local_labels(&data.train)?;
    let initial_loss = mean_loss(base, None, head, &data.train, &labels)?;
    let mut opt = Sgd::new(cfg.momentum, cfg.weight_decay);
    let epoch_losses = run_epochs(&data.train, &labels, cfg, rng, |x, y, lr| {
        {
            let mut ps = base.params_mut();
            zero_grads(&mut ps);
        }
        head.weight.zero_grad();
        head.bias.zero_grad();
        let (logits, cache) = base.forward(None, head, x, None)?;
        let (loss, d_logits) = batch_cross_entropy(&logits, y)?;
        let grads = base.backward(None, head, &cache, &d_logits)?;
        base.accumulate(&grads)?;
        accumulate_head(head, &grads)?;
        let mut ps = base.params_mut();
        ps.extend(head.params_mut());
        opt.step(&mut ps, lr);
        Ok(loss as f64)
    })?;
    let final_loss = mean_loss(base, None, head, &data.train, &labels)?;
    Ok(TrainLog { initial_loss, epoch_losses, final_loss, base_grad_norm_sq: 0.0 })
}

/// Trains the adapter set of task `data.task_id` on a frozen base.
///
/// With `previous`, the generators start from its final values; otherwise
/// they start from the identity construction. Fails with an invariant error
/// if any base parameter changes.
pub fn train_adapter_task(
    base: &BaseNetwork,
    data: &TaskDataset,
    cfg: &TrainConfig,
    previous: Option<&TaskAdapterSet>,
    rng: &mut SeededRng,
) -> Result<(TaskAdapterSet, TrainLog)> {
    cfg.validate()?;
    if !base.is_frozen() {
        return Err(RkrError::Invariant("adapter training requires a frozen base network".into()));
    }
    let before = base.checksum();
    let targets = base.spec().adaptable_targets()?;
    let mut set = init_adapter_set(
        data.task_id,
        &targets,
        (base.feature_dim(), data.num_classes()),
        cfg.rank,
        cfg.lite,
        previous,
        rng,
    )?;
    let labels = data.local_labels(&data.train)?;
    let initial_loss = mean_loss(base, Some(&set), &set.head, &data.train, &labels)?;
    let mut opt = Sgd::new(cfg.momentum, 0.0);
    let epoch_losses = run_epochs(&data.train, &labels, cfg, rng, |x, y, lr| {
        zero_grads(&mut set.params_mut());
        let (logits, cache) = base.forward(Some(&set), &set.head, x, None)?;
        let (loss, d_logits) = batch_cross_entropy(&logits, y)?;
        let grads = base.backward(Some(&set), &set.head, &cache, &d_logits)?;
        accumulate_adapters(&mut set, &grads)?;
        opt.step(&mut set.params_mut(), lr);
        Ok(loss as f64)
    })?;
    let final_loss = mean_loss(base, Some(&set), &set.head, &data.train, &labels)?;
    set.finalize();
    let base_grad_norm_sq = base.params().iter().map(|p| p.grad.norm_sq() as f64).sum();
    if base.checksum() != before || base_grad_norm_sq != 0.0 {
        return Err(RkrError::Invariant(format!("base network changed while training task {}", data.task_id)));
    }
    Ok((set, TrainLog { initial_loss, epoch_losses, final_loss, base_grad_norm_sq }))
}

/// Percentage of `split` whose argmax logit equals the local label.
pub fn evaluate_split(base: &BaseNetwork, adapters: Option<&TaskAdapterSet>, head: &Head, data: &TaskDataset, split: &Split) -> Result<f64> {
    if split.is_empty() {
        return Err(RkrError::Evaluation(format!("task {} has no test examples", data.task_id)));
    }
    let labels = data.local_labels(split)?;
    let mut correct = 0usize;
    for start in (0..split.len()).step_by(256) {
        let idx: Vec<usize> = (start..(start + 256).min(split.len())).collect();
        let (logits, _) = base.forward(adapters, head, &split.inputs.gather_rows(&idx), None)?;
        let c = logits.shape()[1];
        for (row, &i) in logits.data().chunks(c).zip(&idx) {
            if argmax(row) == labels[i] {
                correct += 1;
            }
        }
    }
    Ok(100.0 * correct as f64 / split.len() as f64)
}

/// Test accuracy of one task under its own adapters.
pub fn evaluate_task(base: &BaseNetwork, adapters: Option<&TaskAdapterSet>, head: &Head, data: &TaskDataset) -> Result<f64> {
    evaluate_split(base, adapters, head, data, &data.test)
}

/// Which protocol a sequence runs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Rkr,
    RkrLite,
    /// One shared, never-frozen network trained task after task with per-task heads.
    FinetuneBaseline,
}

impl std::str::FromStr for Variant {
    type Err = RkrError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rkr" => Ok(Variant::Rkr),
            "rkr_lite" | "rkr-lite" => Ok(Variant::RkrLite),
            "finetune_baseline" | "finetune-baseline" => Ok(Variant::FinetuneBaseline),
            other => Err(RkrError::Config(format!("unknown variant {other:?}"))),
        }
    }
}

impl Variant {
    pub fn as_str(&self) -> &'static str {
        match self {
            Variant::Rkr => "rkr",
            Variant::RkrLite => "rkr_lite",
            Variant::FinetuneBaseline => "finetune_baseline",
        }
    }
}

/// Everything a finished task needs for inference, plus its drift probe.
#[derive(Clone, Debug)]
pub struct TaskState {
    pub task_id: usize,
    /// `None` for the base task and for the baseline.
    pub adapters: Option<TaskAdapterSet>,
    /// Head for tasks without an adapter set.
    pub head: Option<Head>,
    pub probe_inputs: Tensor,
    pub probe_logits: Tensor,
    pub acc_during: f64,
    pub log: TrainLog,
    /// Generator checksum at step 0 of this task's training.
    pub init_checksum: Option<String>,
}

impl TaskState {
    pub fn head(&self) -> &Head {
        match (&self.adapters, &self.head) {
            (Some(a), _) => &a.head,
            (None, Some(h)) => h,
            (None, None) => unreachable!("every task state stores a head"),
        }
    }

    pub fn logits(&self, base: &BaseNetwork, input: &Tensor) -> Result<Tensor> {
        Ok(base.forward(self.adapters.as_ref(), self.head(), input, None)?.0)
    }
}

/// Per-task drift of the recorded probe logits under the current network.
pub fn no_forgetting_audit(base: &BaseNetwork, tasks: &[TaskState]) -> Result<Vec<f64>> {
    tasks
        .iter()
        .map(|t| {
            if t.probe_logits.is_empty() {
                return Err(RkrError::Audit(format!("task {} has no probe record", t.task_id)));
            }
            let now = t.logits(base, &t.probe_inputs)?;
            Ok(now.max_abs_diff(&t.probe_logits)? as f64)
        })
        .collect()
}

#[derive(Clone, Debug, Serialize)]
pub struct TaskReport {
    pub task_id: usize,
    pub classes: Vec<usize>,
    pub acc_during: f64,
    pub acc_after: f64,
    pub drift: f64,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub adapter_params: usize,
    /// Generator checksum at the start of this task and at the end of the previous one.
    pub init_checksum: Option<String>,
    pub previous_final_checksum: Option<String>,
}

#[derive(Clone, Debug, Serialize)]
pub struct RunReport {
    pub variant: Variant,
    pub seed: u64,
    pub forward_transfer: bool,
    pub tasks: Vec<TaskReport>,
    pub avg_acc_during: f64,
    pub avg_acc_after: f64,
    pub max_drift: f64,
    pub audit: ParamAudit,
    pub base_checksum: String,
    pub wall_clock_secs: f64,
}

/// Options for [`run_sequence`].
#[derive(Clone, Debug)]
pub struct SequenceOptions {
    pub variant: Variant,
    /// Start each task's generators from the previous task's finals.
    pub forward_transfer: bool,
    /// One config per task; a single entry applies to every task.
    pub train: Vec<TrainConfig>,
    pub seed: u64,
}

impl SequenceOptions {
    pub fn config_for(&self, task_index: usize) -> &TrainConfig {
        self.train.get(task_index).unwrap_or_else(|| self.train.last().expect("non-empty train configs"))
    }
}

/// A finished sequence: final network, per-task state and the report.
#[derive(Clone, Debug)]
pub struct SequenceRun {
    pub base: BaseNetwork,
    pub tasks: Vec<TaskState>,
    pub report: RunReport,
}

/// Runs the full protocol over `datasets` in order.
pub fn run_sequence(spec: &NetworkSpec, datasets: &[TaskDataset], opts: &SequenceOptions) -> Result<SequenceRun> {
    let started = Instant::now();
    if datasets.is_empty() {
        return Err(RkrError::Config("no tasks to run".into()));
    }
    if opts.train.is_empty() {
        return Err(RkrError::Config("no training config".into()));
    }
    check_disjoint(datasets)?;
    let rng = SeededRng::new(opts.seed);
    let lite = opts.variant == Variant::RkrLite;

    let first = &datasets[0];
    let cfg0 = opts.config_for(0);
    let mut task_rng = rng.fork(1);
    info!("task {}: training base network ({} classes)", first.task_id, first.num_classes());
    let (mut base, head, log) = if opts.variant == Variant::FinetuneBaseline {
        let mut base = BaseNetwork::init(spec, &mut task_rng)?;
        let mut head = Head::fresh(base.feature_dim(), first.num_classes(), &mut task_rng);
        let log = fit_shared(&mut base, &mut head, first, cfg0, &mut task_rng)?;
        (base, head, log)
    } else {
        train_base_task(spec, first, cfg0, &mut task_rng)?
    };
    let probe_n = cfg0.batch_size;
    let mut tasks = Vec::with_capacity(datasets.len());
    let probe = first.test.head(probe_n).inputs;
    let probe_logits = base.forward(None, &head, &probe, None)?.0;
    let acc = evaluate_task(&base, None, &head, first)?;
    info!("task {}: accuracy {acc:.2}%", first.task_id);
    tasks.push(TaskState {
        task_id: first.task_id,
        adapters: None,
        head: Some(head),
        probe_inputs: probe,
        probe_logits,
        acc_during: acc,
        log,
        init_checksum: None,
    });
    let base_checksum = base.checksum();

    for (k, data) in datasets.iter().enumerate().skip(1) {
        let cfg = TrainConfig { lite, ..opts.config_for(k).clone() };
        let mut task_rng = rng.fork(1 + k as u64);
        let state = match opts.variant {
            Variant::Rkr | Variant::RkrLite => {
                let previous = if opts.forward_transfer {
                    tasks.last().and_then(|t: &TaskState| t.adapters.as_ref())
                } else {
                    None
                };
                let init_checksum = previous.map(|p| p.generator_checksum());
                let (set, log) = train_adapter_task(&base, data, &cfg, previous, &mut task_rng)?;
                let init_checksum = init_checksum.or_else(|| {
                    // Scratch start: record the checksum of the identity construction.
                    init_adapter_set(data.task_id, &set.layers.iter().map(|l| l.target).collect::<Vec<_>>(),
                        (base.feature_dim(), data.num_classes()), cfg.rank, lite, None, &mut task_rng.fork(0))
                        .ok()
                        .map(|s| s.generator_checksum())
                });
                let acc = evaluate_task(&base, Some(&set), &set.head, data)?;
                let probe = data.test.head(cfg.batch_size).inputs;
                let probe_logits = base.forward(Some(&set), &set.head, &probe, None)?.0;
                TaskState {
                    task_id: data.task_id,
                    adapters: Some(set),
                    head: None,
                    probe_inputs: probe,
                    probe_logits,
                    acc_during: acc,
                    log,
                    init_checksum,
                }
            }
            Variant::FinetuneBaseline => {
                let mut head = Head::fresh(base.feature_dim(), data.num_classes(), &mut task_rng);
                let log = fit_shared(&mut base, &mut head, data, &cfg, &mut task_rng)?;
                head.weight.freeze();
                head.bias.freeze();
                let acc = evaluate_task(&base, None, &head, data)?;
                let probe = data.test.head(cfg.batch_size).inputs;
                let probe_logits = base.forward(None, &head, &probe, None)?.0;
                TaskState {
                    task_id: data.task_id,
                    adapters: None,
                    head: Some(head),
                    probe_inputs: probe,
                    probe_logits,
                    acc_during: acc,
                    log,
                    init_checksum: None,
                }
            }
        };
        info!("task {}: accuracy {:.2}%", data.task_id, state.acc_during);
        tasks.push(state);
        if opts.variant != Variant::FinetuneBaseline && base.checksum() != base_checksum {
            return Err(RkrError::Invariant("base checksum changed after task training".into()));
        }
    }

    let drifts = no_forgetting_audit(&base, &tasks)?;
    let rank = opts.config_for(0).rank;
    let param_audit = audit(&spec.inventory()?, rank, lite);
    let mut reports = Vec::with_capacity(tasks.len());
    for (k, (state, data)) in tasks.iter().zip(datasets).enumerate() {
        let acc_after = evaluate_task(&base, state.adapters.as_ref(), state.head(), data)?;
        let adapter_params = state.adapters.as_ref().map_or(0, |a| a.generator_param_count());
        if state.adapters.is_some() && adapter_params as u64 != param_audit.adapter_total {
            return Err(RkrError::Invariant(format!(
                "task {}: {adapter_params} generator params, audit says {}",
                state.task_id, param_audit.adapter_total
            )));
        }
        let previous_final_checksum = if k >= 1 && opts.forward_transfer {
            tasks[k - 1].adapters.as_ref().map(|a| a.generator_checksum())
        } else {
            None
        };
        reports.push(TaskReport {
            task_id: state.task_id,
            classes: data.classes.clone(),
            acc_during: state.acc_during,
            acc_after,
            drift: drifts[k],
            initial_loss: state.log.initial_loss,
            final_loss: state.log.final_loss,
            adapter_params,
            init_checksum: state.init_checksum.clone(),
            previous_final_checksum,
        });
    }
    let n = reports.len() as f64;
    let report = RunReport {
        variant: opts.variant,
        seed: opts.seed,
        forward_transfer: opts.forward_transfer,
        avg_acc_during: reports.iter().map(|r| r.acc_during).sum::<f64>() / n,
        avg_acc_after: reports.iter().map(|r| r.acc_after).sum::<f64>() / n,
        max_drift: drifts.iter().copied().fold(0.0, f64::max),
        tasks: reports,
        audit: param_audit,
        base_checksum: base.checksum(),
        wall_clock_secs: started.elapsed().as_secs_f64(),
    };
    Ok(SequenceRun { base, tasks, report })
}
