//! CADA-VAE with an adaptable visual encoder, trained task by task.

use log::{debug, info, warn};
use serde::{Deserialize, Serialize};

use crate::error::{Result, RkrError};
use crate::ops::{argmax, batch_cross_entropy, l1, l1_backward};
use crate::rng::SeededRng;
use crate::tensor::{Param, Scalar, Tensor};
use crate::train::{Adam, Split};

use super::data::GzslTask;
use super::losses::{
    distribution_alignment_backward, distribution_alignment_loss, harmonic_mean, kl_backward, kl_divergence,
    reparameterize_backward, sample, AnnealSchedule,
};
use super::nets::{Decoder, Encoder, EncoderAdapters, FcLayer};

/// Layer widths of the four networks.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CadaDims {
    pub feature_dim: usize,
    pub embedding_dim: usize,
    pub latent_dim: usize,
    pub visual_encoder_hidden: usize,
    pub visual_decoder_hidden: usize,
    pub attribute_encoder_hidden: usize,
    pub attribute_decoder_hidden: usize,
}

impl Default for CadaDims {
    fn default() -> Self {
        Self {
            feature_dim: 64,
            embedding_dim: 16,
            latent_dim: 8,
            visual_encoder_hidden: 48,
            visual_decoder_hidden: 52,
            attribute_encoder_hidden: 44,
            attribute_decoder_hidden: 20,
        }
    }
}

fn d_beta() -> AnnealSchedule {
    AnnealSchedule { start_epoch: 0, end_epoch: 93, rate: 0.0026 }
}
fn d_gamma() -> AnnealSchedule {
    AnnealSchedule { start_epoch: 21, end_epoch: 75, rate: 0.044 }
}
fn d_delta() -> AnnealSchedule {
    AnnealSchedule { start_epoch: 6, end_epoch: 22, rate: 0.54 }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GzslTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub vae_lr: f64,
    pub classifier_lr: f64,
    pub classifier_epochs: usize,
    pub classifier_batch_size: usize,
    /// Latent samples drawn per class to train the classifier.
    pub samples_per_class: usize,
    pub rank: usize,
    pub lite: bool,
    /// Start each task's encoder adapters from the previous task's.
    pub forward_transfer: bool,
    pub beta: AnnealSchedule,
    pub gamma: AnnealSchedule,
    pub delta: AnnealSchedule,
}

impl Default for GzslTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 50,
            vae_lr: 0.00015,
            classifier_lr: 0.001,
            classifier_epochs: 20,
            classifier_batch_size: 32,
            samples_per_class: 100,
            rank: 16,
            lite: false,
            forward_transfer: true,
            beta: d_beta(),
            gamma: d_gamma(),
            delta: d_delta(),
        }
    }
}

impl GzslTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.classifier_epochs == 0 || self.classifier_batch_size == 0 {
            return Err(RkrError::Config("GZSL epochs and batch sizes must be positive".into()));
        }
        if self.samples_per_class == 0 || self.rank == 0 {
            return Err(RkrError::Config("samples per class and rank must be positive".into()));
        }
        if !(self.vae_lr > 0.0) || !(self.classifier_lr > 0.0) {
            return Err(RkrError::Config("learning rates must be positive".into()));
        }
        self.beta.validate()?;
        self.gamma.validate()?;
        self.delta.validate()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GzslVariant {
    Rkr,
    /// The visual encoder keeps training on every task without adapters.
    FinetuneBaseline,
}

impl std::str::FromStr for GzslVariant {
    type Err = RkrError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rkr" => Ok(GzslVariant::Rkr),
            "finetune_baseline" | "finetune-baseline" => Ok(GzslVariant::FinetuneBaseline),
            other => Err(RkrError::Config(format!("unknown GZSL variant {other:?}"))),
        }
    }
}

/// Unseen, seen and harmonic-mean accuracy in percent.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GzslMetrics {
    pub unseen: f64,
    pub seen: f64,
    pub harmonic: f64,
}

impl GzslMetrics {
    pub fn new(unseen: f64, seen: f64) -> Self {
        Self { unseen, seen, harmonic: harmonic_mean(unseen, seen) }
    }
}

/// Everything stored for one task besides the shared visual encoder base.
#[derive(Clone, Debug)]
pub struct TaskModules {
    pub task_id: usize,
    pub encoder_adapters: Option<EncoderAdapters>,
    pub attribute_encoder: Encoder,
    pub attribute_decoder: Decoder,
    pub visual_decoder: Decoder,
    /// Latent → task classes (seen then unseen).
    pub classifier: FcLayer,
}

impl TaskModules {
    pub fn stored_params(&self) -> usize {
        self.attribute_encoder.param_count()
            + self.attribute_decoder.param_count()
            + self.visual_decoder.param_count()
            + self.classifier.param_count()
    }

    pub fn adapter_params(&self) -> usize {
        self.encoder_adapters.as_ref().map_or(0, |a| a.param_count())
    }
}

/// Average over classes of per-class top-1 accuracy. Classes without test
/// examples are skipped with a warning; `None` when no class has examples.
pub fn per_class_accuracy(predicted: &[usize], truth: &[usize], classes: &[usize]) -> Option<f64> {
    let mut accs = Vec::new();
    for &c in classes {
        let (mut n, mut hit) = (0usize, 0usize);
        for (&p, &t) in predicted.iter().zip(truth) {
            if t == c {
                n += 1;
                hit += (p == t) as usize;
            }
        }
        if n == 0 {
            warn!("class {c} has no test examples; excluded from the average");
            continue;
        }
        accs.push(100.0 * hit as f64 / n as f64);
    }
    (!accs.is_empty()).then(|| accs.iter().sum::<f64>() / accs.len() as f64)
}

fn batches(n: usize, size: usize, rng: &mut SeededRng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut order);
    order.chunks(size).map(|c| c.to_vec()).collect()
}

fn add_scaled(acc: &mut Tensor, t: &Tensor, s: Scalar) -> Result<()> {
    acc.add_assign(&t.scale(s))
}

/// Trains the four networks on one task's seen classes. Returns per-epoch mean loss.
#[allow(clippy::too_many_arguments)]
fn train_vaes(
    ev: &mut Encoder,
    mut adapters: Option<&mut EncoderAdapters>,
    ea: &mut Encoder,
    da: &mut Decoder,
    dv: &mut Decoder,
    task: &GzslTask,
    cfg: &GzslTrainConfig,
    rng: &mut SeededRng,
) -> Result<Vec<f64>> {
    let emb = task.embeddings_for(&task.train.labels)?;
    let mut opt = Adam::default();
    let mut losses = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let (beta, gamma, delta) =
            (cfg.beta.value(epoch) as Scalar, cfg.gamma.value(epoch) as Scalar, cfg.delta.value(epoch) as Scalar);
        let mut total = 0.0;
        for (bi, idx) in batches(task.train.len(), cfg.batch_size, rng).into_iter().enumerate() {
            let x = task.train.inputs.gather_rows(&idx);
            let c = emb.gather_rows(&idx);
            let inv = 1.0 / idx.len() as Scalar;

            let (gv, cache_v) = ev.forward(adapters.as_deref(), &x)?;
            let (ga, cache_a) = ea.forward(None, &c)?;
            let (zv, eps_v) = sample(&gv, rng)?;
            let (za, eps_a) = sample(&ga, rng)?;
            let (x_rec, c1) = dv.forward(&zv)?;
            let (c_rec, c2) = da.forward(&za)?;
            let (c_cross, c3) = da.forward(&zv)?;
            let (x_cross, c4) = dv.forward(&za)?;

            let recon = l1(&x_rec, &x)? + l1(&c_rec, &c)?;
            let kl = kl_divergence(&gv) + kl_divergence(&ga);
            let cross = l1(&c_cross, &c)? + l1(&x_cross, &x)?;
            let dist = distribution_alignment_loss(&gv, &ga)?;
            let loss = inv * (recon + beta * kl + gamma * cross + delta * dist);
            if !loss.is_finite() {
                return Err(RkrError::Divergence { epoch, batch: bi, loss: loss as f64 });
            }
            total += loss as f64 * idx.len() as f64;

            for p in ev.params_mut().into_iter().chain(ea.params_mut()).chain(da.params_mut()).chain(dv.params_mut()) {
                p.zero_grad();
            }
            if let Some(a) = adapters.as_deref_mut() {
                a.params_mut().into_iter().for_each(|p| p.zero_grad());
            }

            let mut dz_v = dv.backward(&c1, &l1_backward(&x_rec, &x)?.scale(inv))?;
            dz_v.add_assign(&da.backward(&c3, &l1_backward(&c_cross, &c)?.scale(gamma * inv))?)?;
            let mut dz_a = da.backward(&c2, &l1_backward(&c_rec, &c)?.scale(inv))?;
            dz_a.add_assign(&dv.backward(&c4, &l1_backward(&x_cross, &x)?.scale(gamma * inv))?)?;

            let (mut dm_v, mut dl_v) = reparameterize_backward(&gv, &eps_v, &dz_v)?;
            let (mut dm_a, mut dl_a) = reparameterize_backward(&ga, &eps_a, &dz_a)?;
            let (km_v, kl_v) = kl_backward(&gv);
            let (km_a, kl_a) = kl_backward(&ga);
            add_scaled(&mut dm_v, &km_v, beta * inv)?;
            add_scaled(&mut dl_v, &kl_v, beta * inv)?;
            add_scaled(&mut dm_a, &km_a, beta * inv)?;
            add_scaled(&mut dl_a, &kl_a, beta * inv)?;
            let [wm_v, wl_v, wm_a, wl_a] = distribution_alignment_backward(&gv, &ga)?;
            add_scaled(&mut dm_v, &wm_v, delta * inv)?;
            add_scaled(&mut dl_v, &wl_v, delta * inv)?;
            add_scaled(&mut dm_a, &wm_a, delta * inv)?;
            add_scaled(&mut dl_a, &wl_a, delta * inv)?;

            ev.backward(adapters.as_deref_mut(), &cache_v, &dm_v, &dl_v)?;
            ea.backward(None, &cache_a, &dm_a, &dl_a)?;

            let mut params: Vec<&mut Param> = Vec::new();
            params.extend(ev.params_mut());
            if let Some(a) = adapters.as_deref_mut() {
                params.extend(a.params_mut());
            }
            params.extend(ea.params_mut());
            params.extend(da.params_mut());
            params.extend(dv.params_mut());
            opt.step(&mut params, cfg.vae_lr);
        }
        let mean = total / task.train.len() as f64;
        debug!("gzsl task {} epoch {epoch}: loss {mean:.4}", task.task_id);
        losses.push(mean);
    }
    Ok(losses)
}

/// Linear softmax classifier on latents sampled from the attribute encoder.
fn train_classifier(ea: &Encoder, task: &GzslTask, cfg: &GzslTrainConfig, rng: &mut SeededRng) -> Result<FcLayer> {
    let n = cfg.samples_per_class;
    let rows: Vec<usize> = (0..task.num_classes()).flat_map(|k| std::iter::repeat_n(k, n)).collect();
    let (g, _) = ea.forward(None, &task.embeddings.gather_rows(&rows))?;
    let (z, _) = sample(&g, rng)?;
    let mut clf = FcLayer::fresh(ea.latent_dim(), task.num_classes(), rng);
    let mut opt = Adam::default();
    for epoch in 0..cfg.classifier_epochs {
        for (bi, idx) in batches(rows.len(), cfg.classifier_batch_size, rng).into_iter().enumerate() {
            let zb = z.gather_rows(&idx);
            let yb: Vec<usize> = idx.iter().map(|&i| rows[i]).collect();
            let logits = crate::ops::affine(&zb, &clf.weight.value, &clf.bias.value)?;
            let (loss, d_logits) = batch_cross_entropy(&logits, &yb)?;
            if !loss.is_finite() {
                return Err(RkrError::Divergence { epoch, batch: bi, loss: loss as f64 });
            }
            let (_, dw, db) = crate::ops::affine_backward(&zb, &clf.weight.value, &d_logits)?;
            clf.weight.grad = dw;
            clf.bias.grad = db;
            opt.step(&mut [&mut clf.weight, &mut clf.bias], cfg.classifier_lr);
        }
    }
    Ok(clf)
}

fn predict(ev: &Encoder, adapters: Option<&EncoderAdapters>, clf: &FcLayer, split: &Split) -> Result<(Tensor, Vec<usize>)> {
    let means = ev.encode_mean(adapters, &split.inputs)?;
    let logits = crate::ops::affine(&means, &clf.weight.value, &clf.bias.value)?;
    let c = clf.outputs();
    Ok((means, logits.data().chunks(c).map(argmax).collect()))
}

/// U, S, H of one task plus the test latent means (seen then unseen rows).
pub fn evaluate_gzsl(ev: &Encoder, modules: &TaskModules, task: &GzslTask) -> Result<(GzslMetrics, Tensor)> {
    let adapters = modules.encoder_adapters.as_ref();
    let (m_s, p_s) = predict(ev, adapters, &modules.classifier, &task.test_seen)?;
    let (m_u, p_u) = predict(ev, adapters, &modules.classifier, &task.test_unseen)?;
    let to_global = |p: Vec<usize>| -> Vec<usize> { p.into_iter().map(|k| task.classes[k]).collect() };
    let seen = per_class_accuracy(&to_global(p_s), &task.test_seen.labels, &task.seen)
        .ok_or_else(|| RkrError::Evaluation(format!("task {} has no seen test examples", task.task_id)))?;
    let unseen = per_class_accuracy(&to_global(p_u), &task.test_unseen.labels, &task.unseen)
        .ok_or_else(|| RkrError::Evaluation(format!("task {} has no unseen test examples", task.task_id)))?;
    let mut latents = m_s.into_data();
    latents.extend(m_u.into_data());
    let rows = latents.len() / ev.latent_dim();
    Ok((GzslMetrics::new(unseen, seen), Tensor::new(&[rows, ev.latent_dim()], latents)?))
}

/// Shared visual encoder base plus per-task stored modules.
#[derive(Clone, Debug)]
pub struct CadaModel {
    pub dims: CadaDims,
    pub visual_encoder: Encoder,
    pub tasks: Vec<TaskModules>,
}

impl CadaModel {
    pub fn fresh(dims: CadaDims, rng: &mut SeededRng) -> Self {
        let visual_encoder = Encoder::fresh(dims.feature_dim, dims.visual_encoder_hidden, dims.latent_dim, rng);
        Self { dims, visual_encoder, tasks: Vec::new() }
    }

    fn fresh_modules(&self, rng: &mut SeededRng) -> (Encoder, Decoder, Decoder) {
        let d = &self.dims;
        (
            Encoder::fresh(d.embedding_dim, d.attribute_encoder_hidden, d.latent_dim, rng),
            Decoder::fresh(d.latent_dim, d.attribute_decoder_hidden, d.embedding_dim, rng),
            Decoder::fresh(d.latent_dim, d.visual_decoder_hidden, d.feature_dim, rng),
        )
    }

    pub fn memory(&self) -> GzslMemory {
        let base = self.visual_encoder.param_count();
        let per_task: Vec<GzslTaskMemory> = self
            .tasks
            .iter()
            .map(|m| GzslTaskMemory {
                task_id: m.task_id,
                encoder_adapters: m.adapter_params(),
                stored_modules: m.stored_params(),
            })
            .collect();
        let total = base + per_task.iter().map(|t| t.encoder_adapters + t.stored_modules).sum::<usize>();
        let separate_models = per_task.iter().map(|t| base + t.stored_modules).sum::<usize>();
        GzslMemory { visual_encoder_base: base, per_task, total, separate_models }
    }
}

/// Parameter counts behind the memory comparison.
#[derive(Clone, Debug, Serialize)]
pub struct GzslTaskMemory {
    pub task_id: usize,
    pub encoder_adapters: usize,
    /// Attribute encoder, both decoders and the latent classifier.
    pub stored_modules: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct GzslMemory {
    pub visual_encoder_base: usize,
    pub per_task: Vec<GzslTaskMemory>,
    /// Shared base plus everything stored per task.
    pub total: usize,
    /// One full model (visual encoder and stored modules) per task.
    pub separate_models: usize,
}

/// Trains task `task` and appends its modules to `model`.
///
/// The first task trains everything. Later tasks under [`GzslVariant::Rkr`]
/// train visual-encoder adapters over the frozen base, and fail with an
/// invariant error if the base changes.
pub fn train_gzsl_task(
    model: &mut CadaModel,
    task: &GzslTask,
    cfg: &GzslTrainConfig,
    variant: GzslVariant,
    rng: &mut SeededRng,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    if task.feature_dim() != model.dims.feature_dim || task.embedding_dim() != model.dims.embedding_dim {
        return Err(RkrError::Dimension(format!(
            "task {} has {}-d features and {}-d embeddings; model expects {} and {}",
            task.task_id,
            task.feature_dim(),
            task.embedding_dim(),
            model.dims.feature_dim,
            model.dims.embedding_dim
        )));
    }
    let first = model.tasks.is_empty();
    let (mut ea, mut da, mut dv) = match model.tasks.last() {
        Some(prev) => (prev.attribute_encoder.clone(), prev.attribute_decoder.clone(), prev.visual_decoder.clone()),
        None => model.fresh_modules(rng),
    };
    for p in ea.params_mut().into_iter().chain(da.params_mut()).chain(dv.params_mut()) {
        p.frozen = false;
        p.zero_grad();
    }
    let mut adapters = if first || variant == GzslVariant::FinetuneBaseline {
        None
    } else {
        let previous = model.tasks.last().and_then(|m| m.encoder_adapters.clone()).filter(|_| cfg.forward_transfer);
        let mut a = match previous {
            Some(a) => a,
            None => EncoderAdapters::fresh(&model.visual_encoder, cfg.rank, cfg.lite, rng)?,
        };
        a.params_mut().into_iter().for_each(|p| {
            p.frozen = false;
            p.zero_grad();
        });
        Some(a)
    };
    let base_before = model.visual_encoder.checksum();
    let losses = train_vaes(&mut model.visual_encoder, adapters.as_mut(), &mut ea, &mut da, &mut dv, task, cfg, rng)?;
    if adapters.is_some() && model.visual_encoder.checksum() != base_before {
        return Err(RkrError::Invariant(format!("visual encoder base changed while training task {}", task.task_id)));
    }
    if first && variant == GzslVariant::Rkr {
        model.visual_encoder.freeze();
    }
    let classifier = train_classifier(&ea, task, cfg, rng)?;
    let mut modules = TaskModules {
        task_id: task.task_id,
        encoder_adapters: adapters,
        attribute_encoder: ea,
        attribute_decoder: da,
        visual_decoder: dv,
        classifier,
    };
    if let Some(a) = modules.encoder_adapters.as_mut() {
        a.params_mut().into_iter().for_each(|p| p.freeze());
    }
    model.tasks.push(modules);
    Ok(losses)
}

#[derive(Clone, Debug, Serialize)]
pub struct GzslTaskReport {
    pub task_id: usize,
    pub seen_classes: Vec<usize>,
    pub unseen_classes: Vec<usize>,
    pub at_completion: GzslMetrics,
    pub after_sequence: GzslMetrics,
    /// Max abs change of the task's test latent means since its completion.
    pub latent_drift: f64,
    pub final_loss: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct GzslReport {
    pub variant: GzslVariant,
    pub seed: u64,
    pub config: GzslTrainConfig,
    pub dims: CadaDims,
    pub tasks: Vec<GzslTaskReport>,
    pub memory: GzslMemory,
}

pub struct GzslRun {
    pub model: CadaModel,
    pub report: GzslReport,
}

/// Trains every task in order, then re-evaluates each with its stored modules.
pub fn run_gzsl_sequence(
    tasks: &[GzslTask],
    dims: CadaDims,
    cfg: &GzslTrainConfig,
    variant: GzslVariant,
    seed: u64,
) -> Result<GzslRun> {
    if tasks.is_empty() {
        return Err(RkrError::Config("no GZSL tasks".into()));
    }
    let root = SeededRng::new(seed);
    let mut model = CadaModel::fresh(dims, &mut root.fork(0));
    let mut completion = Vec::with_capacity(tasks.len());
    for (k, task) in tasks.iter().enumerate() {
        let mut rng = root.fork(1 + k as u64);
        let losses = train_gzsl_task(&mut model, task, cfg, variant, &mut rng)?;
        let (metrics, latents) = evaluate_gzsl(&model.visual_encoder, &model.tasks[k], task)?;
        info!(
            "gzsl task {}: U {:.2} S {:.2} H {:.2}",
            task.task_id, metrics.unseen, metrics.seen, metrics.harmonic
        );
        completion.push((metrics, latents, losses.last().copied().unwrap_or(f64::NAN)));
    }
    let mut reports = Vec::with_capacity(tasks.len());
    for (k, task) in tasks.iter().enumerate() {
        let (after, latents) = evaluate_gzsl(&model.visual_encoder, &model.tasks[k], task)?;
        let (at, ref recorded, final_loss) = completion[k];
        reports.push(GzslTaskReport {
            task_id: task.task_id,
            seen_classes: task.seen.clone(),
            unseen_classes: task.unseen.clone(),
            at_completion: at,
            after_sequence: after,
            latent_drift: latents.max_abs_diff(recorded)? as f64,
            final_loss,
        });
    }
    let report = GzslReport { variant, seed, config: cfg.clone(), dims, tasks: reports, memory: model.memory() };
    Ok(GzslRun { model, report })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn per_class_average_ignores_duplication() {
        let truth = vec![0, 0, 1, 1, 1, 1];
        let pred = vec![0, 1, 1, 1, 0, 0];
        let a = per_class_accuracy(&pred, &truth, &[0, 1]).unwrap();
        assert!((a - 50.0).abs() < 1e-12);
        let truth2: Vec<usize> = truth.iter().chain(&truth[..2]).copied().collect();
        let pred2: Vec<usize> = pred.iter().chain(&pred[..2]).copied().collect();
        assert_eq!(per_class_accuracy(&pred2, &truth2, &[0, 1]).unwrap(), a);
    }

    #[test]
    fn empty_classes_are_skipped() {
        assert_eq!(per_class_accuracy(&[1], &[1], &[0, 1]), Some(100.0));
        assert_eq!(per_class_accuracy(&[], &[], &[0]), None);
    }

    #[test]
    fn metrics_harmonic() {
        let m = GzslMetrics::new(58.79, 69.36);
        assert!((m.harmonic - 63.64).abs() < 5e-3);
    }
}
