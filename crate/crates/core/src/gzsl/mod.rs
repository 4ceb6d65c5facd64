//! Task-incremental generalized zero-shot learning with a CADA-VAE whose
//! visual encoder carries per-task adapters.

pub mod data;
pub mod losses;
pub mod model;
pub mod nets;

pub use data::{generate_gzsl_tasks, GzslSynthSpec, GzslTask};
pub use losses::{
    clamp_log_var, cross_alignment_backward, cross_alignment_loss, distribution_alignment_backward,
    distribution_alignment_loss, harmonic_mean, kl_backward, kl_divergence, reparameterize, reparameterize_backward,
    sample, vae_loss, wasserstein_rows, AnnealSchedule, LatentGaussian, LOG_VAR_MAX, LOG_VAR_MIN,
};
pub use model::{
    evaluate_gzsl, per_class_accuracy, run_gzsl_sequence, train_gzsl_task, CadaDims, CadaModel, GzslMemory,
    GzslMetrics, GzslReport, GzslRun, GzslTaskMemory, GzslTaskReport, GzslTrainConfig, GzslVariant, TaskModules,
};
pub use nets::{Decoder, Encoder, EncoderAdapters, FcAdapter, FcLayer};
