//! Rectification generators, scaling generators, per-task adapter sets and
//! their closed-form parameter accounting.

mod adapter_set;
pub mod audit;
mod rectification;
mod scaling;

pub use adapter_set::{generator_kinds, init_adapter_set, AdaptableTarget, Head, LayerAdapter, TaskAdapterSet};
pub use audit::{
    audit, audit_with_head, overhead_conv, overhead_fc, resnet18_inventory, InventoryKind, InventoryLayer,
    LayerAudit, Overhead, ParamAudit,
};
pub use rectification::{adapt_weights, RectificationGenerator, TargetShape};
pub use scaling::{apply_scaling, scale_backward, ScalingFactorGenerator};
