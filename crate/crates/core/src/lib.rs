//! Rectification-based knowledge retention (RKR) for task-incremental learning.
//!
//! A base network is trained on the first task and frozen. Every later task
//! learns, per layer, a low-rank additive weight rectification `LM·RM` and a
//! per-channel output scaling, plus its own classifier head. Because nothing
//! a finished task depends on is ever modified, earlier tasks are retained
//! exactly.
//!
//! Modules:
//! - [`tensor`], [`ops`], [`rng`], [`gradcheck`]: dense arithmetic with hand-written backward passes.
//! - [`adapters`]: rectification and scaling generators, adapter sets, parameter audits.
//! - [`model`]: layer specs, base network, adapted forward pass, weight materialization.
//! - [`train`]: optimizers, schedules and the task-incremental protocol.
//! - [`gzsl`]: dual-VAE zero-shot learning with an adapted visual encoder.
//! - [`harness`]: configs, dataset files, synthetic generators, checkpoints and reports.

pub mod adapters;
pub mod error;
pub mod gradcheck;
pub mod gradsuite;
pub mod gzsl;
pub mod harness;
pub mod model;
pub mod ops;
pub mod rng;
pub mod tensor;
pub mod train;

pub use error::{Result, RkrError};
pub use rng::SeededRng;
pub use tensor::{Param, Scalar, Tensor};
