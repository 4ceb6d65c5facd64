//! A base network viewed through one task's adapters.

use crate::adapters::TaskAdapterSet;
use crate::error::{Result, RkrError};
use crate::tensor::Tensor;

use super::network::{AdapterOps, BaseNetwork};

/// Base network plus one task's adapter set, with an optional cache of the
/// rectified weights `Θ + R`.
#[derive(Clone, Debug)]
pub struct AdaptedNetwork<'a> {
    base: &'a BaseNetwork,
    adapters: &'a TaskAdapterSet,
    materialized: Option<Vec<Option<Tensor>>>,
}

impl<'a> AdaptedNetwork<'a> {
    pub fn new(base: &'a BaseNetwork, adapters: &'a TaskAdapterSet) -> Self {
        Self { base, adapters, materialized: None }
    }

    pub fn base(&self) -> &BaseNetwork {
        self.base
    }

    pub fn adapters(&self) -> &TaskAdapterSet {
        self.adapters
    }

    pub fn is_materialized(&self) -> bool {
        self.materialized.is_some()
    }

    /// Precomputes the rectified weight of every layer once. Only finalized
    /// adapter sets may be materialized.
    pub fn materialize(&mut self) -> Result<()> {
        if !self.adapters.is_finalized() {
            return Err(RkrError::State(format!(
                "adapter set for task {} is still under training",
                self.adapters.task_id
            )));
        }
        let mut ops = AdapterOps::default();
        let weights = (0..self.base.plan().len())
            .map(|i| {
                if self.base.plan()[i].target().is_some() {
                    self.base.effective_weight(i, Some(self.adapters), &mut ops).map(Some)
                } else {
                    Ok(None)
                }
            })
            .collect::<Result<Vec<_>>>()?;
        self.materialized = Some(weights);
        Ok(())
    }

    /// Task logits for a batch, plus the adapter multiplies spent.
    pub fn forward_with_ops(&self, input: &Tensor) -> Result<(Tensor, AdapterOps)> {
        let (logits, cache) =
            self.base.forward(Some(self.adapters), &self.adapters.head, input, self.materialized.as_deref())?;
        Ok((logits, cache.ops))
    }

    pub fn forward(&self, input: &Tensor) -> Result<Tensor> {
        Ok(self.forward_with_ops(input)?.0)
    }
}

/// Task logits of `input` under `adapters` (on-the-fly rectification).
pub fn forward_adapted(base: &BaseNetwork, adapters: &TaskAdapterSet, input: &Tensor) -> Result<Tensor> {
    AdaptedNetwork::new(base, adapters).forward(input)
}
