//! Network assembly: layer specs, the base network, and task-adapted inference.

mod adapted;
mod network;
mod spec;

pub use adapted::{forward_adapted, AdaptedNetwork};
pub use network::{
    accumulate_adapters, accumulate_head, AdapterOps, BaseNetwork, ForwardCache, LayerGrad, LayerParams, NetGrads,
};
pub use spec::{build_reference_net, LayerOp, LayerPlan, LayerSpec, NetworkSpec, Preset};
