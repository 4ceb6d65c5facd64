use serde::{Deserialize, Serialize};

use super::rectification::{RectificationGenerator, TargetShape};
use super::scaling::ScalingFactorGenerator;
use crate::error::{Result, RkrError};
use crate::rng::SeededRng;
use crate::tensor::{checksum_all, Param, Scalar, Tensor};

/// An adaptable layer of a network: its position in the layer list and weight shape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdaptableTarget {
    pub layer: usize,
    pub shape: TargetShape,
}

/// Task-local linear classifier `features → classes`.
#[derive(Clone, Debug)]
pub struct Head {
    pub weight: Param,
    pub bias: Param,
}

impl Head {
    pub fn fresh(features: usize, classes: usize, rng: &mut SeededRng) -> Self {
        let bound = 1.0 / (features as Scalar).sqrt();
        Self {
            weight: Param::new(rng.uniform_tensor(&[features, classes], -bound, bound)),
            bias: Param::new(Tensor::zeros(&[classes])),
        }
    }

    pub fn classes(&self) -> usize {
        self.bias.len()
    }

    pub fn features(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn checksum(&self) -> String {
        checksum_all([&self.weight.value, &self.bias.value])
    }

    pub fn params_mut(&mut self) -> [&mut Param; 2] {
        [&mut self.weight, &mut self.bias]
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }
}

/// Generators attached to one adaptable layer.
#[derive(Clone, Debug)]
pub struct LayerAdapter {
    pub target: AdaptableTarget,
    pub rect: Option<RectificationGenerator>,
    pub scale: Option<ScalingFactorGenerator>,
}

impl LayerAdapter {
    pub fn params(&self) -> Vec<&Param> {
        let mut v: Vec<&Param> = Vec::new();
        if let Some(r) = &self.rect {
            v.extend(r.params());
        }
        if let Some(s) = &self.scale {
            v.push(&s.factors);
        }
        v
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v: Vec<&mut Param> = Vec::new();
        if let Some(r) = &mut self.rect {
            v.extend(r.params_mut());
        }
        if let Some(s) = &mut self.scale {
            v.push(&mut s.factors);
        }
        v
    }
}

/// Every per-task parameter for one task after the first: generators for
/// each adaptable layer plus the task head.
#[derive(Clone, Debug)]
pub struct TaskAdapterSet {
    pub task_id: usize,
    pub rank: usize,
    pub lite: bool,
    pub layers: Vec<LayerAdapter>,
    pub head: Head,
    finalized: bool,
}

/// Which generators a layer carries.
pub fn generator_kinds(shape: &TargetShape, lite: bool) -> (bool, bool) {
    match (lite, shape.is_conv()) {
        (false, _) => (true, true),
        (true, true) => (true, false),
        (true, false) => (false, true),
    }
}

/// Builds the adapter set for task `task_id`.
///
/// With `previous`, generator parameters are copied element-wise from it.
/// Otherwise LM is small uniform noise, RM is zero and F is one, so the
/// adapted network starts out computing exactly the base function. The head
/// is always fresh.
pub fn init_adapter_set(
    task_id: usize,
    targets: &[AdaptableTarget],
    head_dims: (usize, usize),
    rank: usize,
    lite: bool,
    previous: Option<&TaskAdapterSet>,
    rng: &mut SeededRng,
) -> Result<TaskAdapterSet> {
    if task_id < 2 {
        return Err(RkrError::Config(format!(
            "task {task_id} trains the base network; adapters start at task 2"
        )));
    }
    if rank == 0 {
        return Err(RkrError::Config("rank K must be positive".into()));
    }
    let layers = match previous {
        Some(prev) => {
            prev.check_compatible(targets, rank, lite)?;
            prev.layers
                .iter()
                .map(|l| {
                    let mut l = l.clone();
                    for p in l.params_mut() {
                        p.zero_grad();
                        p.frozen = false;
                    }
                    l
                })
                .collect()
        }
        None => {
            let mut layers = Vec::with_capacity(targets.len());
            for t in targets {
                let (has_rect, has_scale) = generator_kinds(&t.shape, lite);
                let rect = if has_rect { Some(RectificationGenerator::fresh(t.shape, rank, rng)?) } else { None };
                let scale = has_scale.then(|| ScalingFactorGenerator::identity(t.shape.out_units()));
                layers.push(LayerAdapter { target: *t, rect, scale });
            }
            layers
        }
    };
    let head = Head::fresh(head_dims.0, head_dims.1, rng);
    Ok(TaskAdapterSet { task_id, rank, lite, layers, head, finalized: false })
}

impl TaskAdapterSet {
    /// Reassembles a set from stored parts (checkpoint loading).
    pub fn from_parts(
        task_id: usize,
        rank: usize,
        lite: bool,
        layers: Vec<LayerAdapter>,
        head: Head,
        finalized: bool,
    ) -> Self {
        Self { task_id, rank, lite, layers, head, finalized }
    }

    pub fn check_compatible(&self, targets: &[AdaptableTarget], rank: usize, lite: bool) -> Result<()> {
        if self.rank != rank || self.lite != lite {
            return Err(RkrError::Incompatible(format!(
                "previous set has K={} lite={}, requested K={rank} lite={lite}",
                self.rank, self.lite
            )));
        }
        let mine: Vec<AdaptableTarget> = self.layers.iter().map(|l| l.target).collect();
        if mine != targets {
            return Err(RkrError::Incompatible(format!(
                "previous set covers {} layers {:?}, network has {:?}",
                mine.len(),
                mine,
                targets
            )));
        }
        Ok(())
    }

    pub fn layer(&self, index: usize) -> Option<&LayerAdapter> {
        self.layers.iter().find(|l| l.target.layer == index)
    }

    pub fn layer_mut(&mut self, index: usize) -> Option<&mut LayerAdapter> {
        self.layers.iter_mut().find(|l| l.target.layer == index)
    }

    /// Generator parameters in a fixed order (layer order, then LM, RM, F).
    pub fn generator_params(&self) -> Vec<&Param> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }

    /// Generators followed by the head, the full trainable set.
    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v: Vec<&mut Param> = self.layers.iter_mut().flat_map(|l| l.params_mut()).collect();
        v.extend(self.head.params_mut());
        v
    }

    pub fn generator_checksum(&self) -> String {
        checksum_all(self.generator_params().into_iter().map(|p| &p.value))
    }

    /// Checksum over generators and head.
    pub fn checksum(&self) -> String {
        checksum_all(
            self.generator_params()
                .into_iter()
                .map(|p| &p.value)
                .chain([&self.head.weight.value, &self.head.bias.value]),
        )
    }

    /// Number of generator parameters (head excluded).
    pub fn generator_param_count(&self) -> usize {
        self.generator_params().iter().map(|p| p.len()).sum()
    }

    pub fn is_finalized(&self) -> bool {
        self.finalized
    }

    /// Ends training: params become frozen and the set read-only.
    pub fn finalize(&mut self) {
        for p in self.params_mut() {
            p.freeze();
        }
        self.finalized = true;
    }
}
