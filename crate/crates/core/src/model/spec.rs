//! Layer specifications, shape inference and reference presets.

use serde::{Deserialize, Serialize};

use crate::adapters::{AdaptableTarget, InventoryKind, InventoryLayer, TargetShape};
use crate::error::{Result, RkrError};
use crate::ops::ConvGeometry;

fn one() -> usize {
    1
}

fn yes() -> bool {
    true
}

/// One layer of a sequential network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LayerSpec {
    /// Convolution with a `kernel_w × kernel_h` window and `out_channels` filters.
    Conv {
        kernel_w: usize,
        kernel_h: usize,
        out_channels: usize,
        #[serde(default = "one")]
        stride: usize,
        #[serde(default)]
        padding: usize,
        #[serde(default = "yes")]
        adaptable: bool,
    },
    Fc {
        out: usize,
        #[serde(default = "yes")]
        adaptable: bool,
    },
    /// 2×2 max pooling, stride 2.
    Pool,
    /// ReLU.
    Activation,
    Flatten,
}

impl LayerSpec {
    pub fn conv(kernel: usize, out_channels: usize, padding: usize) -> Self {
        LayerSpec::Conv { kernel_w: kernel, kernel_h: kernel, out_channels, stride: 1, padding, adaptable: true }
    }

    pub fn fc(out: usize) -> Self {
        LayerSpec::Fc { out, adaptable: true }
    }
}

/// Sequential network description: input shape (`[H, W, C]` or `[n]`) and layers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub input: Vec<usize>,
    pub layers: Vec<LayerSpec>,
}

/// A layer with its operator resolved against the inferred input shape.
#[derive(Clone, Debug, PartialEq)]
pub enum LayerOp {
    Conv { target: TargetShape, geom: ConvGeometry, adaptable: bool },
    Fc { target: TargetShape, adaptable: bool },
    Pool,
    Relu,
    Flatten,
}

/// Resolved per-layer shapes (per example, no batch axis).
#[derive(Clone, Debug, PartialEq)]
pub struct LayerPlan {
    pub op: LayerOp,
    pub in_shape: Vec<usize>,
    pub out_shape: Vec<usize>,
}

impl LayerPlan {
    /// Weight shape of a parameterized layer.
    pub fn target(&self) -> Option<TargetShape> {
        match &self.op {
            LayerOp::Conv { target, .. } | LayerOp::Fc { target, .. } => Some(*target),
            _ => None,
        }
    }

    pub fn adaptable(&self) -> bool {
        matches!(self.op, LayerOp::Conv { adaptable: true, .. } | LayerOp::Fc { adaptable: true, .. })
    }

    pub fn out_len(&self) -> usize {
        self.out_shape.iter().product()
    }
}

impl NetworkSpec {
    /// Infers every layer's input and output shape.
    pub fn plan(&self) -> Result<Vec<LayerPlan>> {
        if self.input.is_empty() || self.input.len() == 2 || self.input.len() > 3 || self.input.contains(&0) {
            return Err(RkrError::Config(format!(
                "input must be [H, W, C] or [n] with positive extents, got {:?}",
                self.input
            )));
        }
        if self.layers.is_empty() {
            return Err(RkrError::Config("network has no layers".into()));
        }
        let mut shape = self.input.clone();
        let mut plan = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            let (op, out) = match *layer {
                LayerSpec::Conv { kernel_w, kernel_h, out_channels, stride, padding, adaptable } => {
                    let [h, w, c] = shape[..] else {
                        return Err(RkrError::Config(format!(
                            "layer {i}: conv needs an H×W×C input, got {shape:?}"
                        )));
                    };
                    if out_channels == 0 {
                        return Err(RkrError::Config(format!("layer {i}: conv with zero filters")));
                    }
                    let geom = ConvGeometry::new(stride, padding)
                        .map_err(|e| RkrError::Config(format!("layer {i}: {e}")))?;
                    let oh = geom.out_extent(h, kernel_h).map_err(|e| RkrError::Config(format!("layer {i}: {e}")))?;
                    let ow = geom.out_extent(w, kernel_w).map_err(|e| RkrError::Config(format!("layer {i}: {e}")))?;
                    let target = TargetShape::Conv { wf: kernel_w, hf: kernel_h, cin: c, cout: out_channels };
                    (LayerOp::Conv { target, geom, adaptable }, vec![oh, ow, out_channels])
                }
                LayerSpec::Fc { out, adaptable } => {
                    let [n] = shape[..] else {
                        return Err(RkrError::Config(format!(
                            "layer {i}: fc needs a flat input (add a flatten layer), got {shape:?}"
                        )));
                    };
                    if out == 0 {
                        return Err(RkrError::Config(format!("layer {i}: fc with zero outputs")));
                    }
                    (LayerOp::Fc { target: TargetShape::Fc { hin: n, hout: out }, adaptable }, vec![out])
                }
                LayerSpec::Pool => {
                    let [h, w, c] = shape[..] else {
                        return Err(RkrError::Config(format!("layer {i}: pool needs an H×W×C input, got {shape:?}")));
                    };
                    if h < 2 || w < 2 {
                        return Err(RkrError::Config(format!("layer {i}: pool on {shape:?} is degenerate")));
                    }
                    (LayerOp::Pool, vec![h / 2, w / 2, c])
                }
                LayerSpec::Activation => (LayerOp::Relu, shape.clone()),
                LayerSpec::Flatten => (LayerOp::Flatten, vec![shape.iter().product()]),
            };
            plan.push(LayerPlan { op, in_shape: shape, out_shape: out.clone() });
            shape = out;
        }
        if shape.len() != 1 {
            return Err(RkrError::Config(format!(
                "network output {shape:?} is not a feature vector; end with flatten or fc"
            )));
        }
        Ok(plan)
    }

    /// Width of the feature vector that feeds the task heads.
    pub fn feature_dim(&self) -> Result<usize> {
        Ok(self.plan()?.last().map(|p| p.out_len()).unwrap_or(0))
    }

    pub fn adaptable_targets(&self) -> Result<Vec<AdaptableTarget>> {
        Ok(self
            .plan()?
            .iter()
            .enumerate()
            .filter(|(_, p)| p.adaptable())
            .map(|(layer, p)| AdaptableTarget { layer, shape: p.target().expect("adaptable layers have weights") })
            .collect())
    }

    /// Parameterized layers in audit form. Conv and fc layers carry biases.
    pub fn inventory(&self) -> Result<Vec<InventoryLayer>> {
        let mut inv = Vec::new();
        for (i, p) in self.plan()?.iter().enumerate() {
            let kind = match p.op {
                LayerOp::Conv { target: TargetShape::Conv { wf, hf, cin, cout }, .. } => {
                    InventoryKind::Conv { wf, hf, cin, cout, bias: true }
                }
                LayerOp::Fc { target: TargetShape::Fc { hin, hout }, adaptable } => {
                    InventoryKind::Fc { hin, hout, bias: true, adaptable }
                }
                _ => continue,
            };
            let kind_name = if matches!(kind, InventoryKind::Conv { .. }) { "conv" } else { "fc" };
            inv.push(InventoryLayer { name: format!("{kind_name}{i}"), kind });
        }
        Ok(inv)
    }
}

/// Desk-scale reference architectures.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    TinyCnn,
    TinyMlp,
}

impl std::str::FromStr for Preset {
    type Err = RkrError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tiny-cnn" => Ok(Preset::TinyCnn),
            "tiny-mlp" => Ok(Preset::TinyMlp),
            other => Err(RkrError::Config(format!("unknown preset {other:?} (expected tiny-cnn or tiny-mlp)"))),
        }
    }
}

/// Builds a preset network.
///
/// * `tiny-cnn`: conv 5×5×8 → ReLU → pool → conv 5×5×16 → ReLU → pool →
///   flatten → fc(`feature_dim`) → ReLU, on an `H×W×C` input. Convolutions
///   use padding 2 so only pooling shrinks the map.
/// * `tiny-mlp`: fc(`hidden`) → ReLU → fc(`feature_dim`) → ReLU on an `[n]`
///   input; `hidden` defaults to 2·n.
pub fn build_reference_net(preset: Preset, input: &[usize], feature_dim: usize, hidden: Option<usize>) -> Result<NetworkSpec> {
    let spec = match preset {
        Preset::TinyCnn => NetworkSpec {
            input: input.to_vec(),
            layers: vec![
                LayerSpec::conv(5, 8, 2),
                LayerSpec::Activation,
                LayerSpec::Pool,
                LayerSpec::conv(5, 16, 2),
                LayerSpec::Activation,
                LayerSpec::Pool,
                LayerSpec::Flatten,
                LayerSpec::fc(feature_dim),
                LayerSpec::Activation,
            ],
        },
        Preset::TinyMlp => {
            let [n] = input[..] else {
                return Err(RkrError::Config(format!("tiny-mlp needs a flat input, got {input:?}")));
            };
            NetworkSpec {
                input: input.to_vec(),
                layers: vec![
                    LayerSpec::fc(hidden.unwrap_or(2 * n)),
                    LayerSpec::Activation,
                    LayerSpec::fc(feature_dim),
                    LayerSpec::Activation,
                ],
            }
        }
    };
    spec.plan()?;
    Ok(spec)
}
