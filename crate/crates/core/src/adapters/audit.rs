//! Closed-form parameter overhead accounting.

use serde::{Deserialize, Serialize};

use super::rectification::TargetShape;

/// Extra parameters of one layer as an exact fraction of its weight count.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Overhead {
    pub numerator: u64,
    pub denominator: u64,
    pub percent: f64,
}

impl Overhead {
    fn new(numerator: u64, denominator: u64) -> Self {
        Self { numerator, denominator, percent: 100.0 * numerator as f64 / denominator as f64 }
    }
}

/// `K·(W_f·C_in + H_f·C_out) + C_out` over `W_f·H_f·C_in·C_out`.
pub fn overhead_conv(wf: u64, hf: u64, cin: u64, cout: u64, rank: u64) -> Overhead {
    assert!(wf > 0 && hf > 0 && cin > 0 && cout > 0 && rank > 0, "arguments must be positive");
    Overhead::new(rank * (wf * cin + hf * cout) + cout, wf * hf * cin * cout)
}

/// `K·(H_in + H_out) + H_out` over `H_in·H_out`.
pub fn overhead_fc(hin: u64, hout: u64, rank: u64) -> Overhead {
    assert!(hin > 0 && hout > 0 && rank > 0, "arguments must be positive");
    Overhead::new(rank * (hin + hout) + hout, hin * hout)
}

/// One entry of a layer inventory. Inventories list parameterized layers
/// only and need not be sequential (shortcut convolutions are fine).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InventoryLayer {
    pub name: String,
    #[serde(flatten)]
    pub kind: InventoryKind,
}

fn yes() -> bool {
    true
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum InventoryKind {
    Conv {
        wf: usize,
        hf: usize,
        cin: usize,
        cout: usize,
        #[serde(default)]
        bias: bool,
    },
    Fc {
        hin: usize,
        hout: usize,
        #[serde(default = "yes")]
        bias: bool,
        /// `false` for a shared classifier that receives no adapters.
        #[serde(default = "yes")]
        adaptable: bool,
    },
    /// Normalization with a per-channel affine pair; its parameters are
    /// stored once per task.
    Norm { channels: usize },
}

impl InventoryLayer {
    pub fn target(&self) -> Option<TargetShape> {
        match self.kind {
            InventoryKind::Conv { wf, hf, cin, cout, .. } => Some(TargetShape::Conv { wf, hf, cin, cout }),
            InventoryKind::Fc { hin, hout, adaptable: true, .. } => Some(TargetShape::Fc { hin, hout }),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LayerAudit {
    pub name: String,
    pub kind: &'static str,
    pub base_weights: u64,
    pub base_bias: u64,
    pub rectification: u64,
    pub scaling: u64,
    pub per_task_norm: u64,
    /// `rectification + scaling + per_task_norm`.
    pub adapter: u64,
    /// Full closed-form numerator for adaptable conv/fc layers (both terms, no lite).
    pub closed_form_numerator: Option<u64>,
}

/// Totals over an inventory for one rank budget and mode.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ParamAudit {
    pub rank: usize,
    pub lite: bool,
    pub layers: Vec<LayerAudit>,
    pub base_without_bias: u64,
    pub base_with_bias: u64,
    pub rectification_total: u64,
    pub scaling_total: u64,
    pub per_task_norm_total: u64,
    pub adapter_total: u64,
    /// Overhead relative to weight tensors only.
    pub percent_excluding_bias: f64,
    /// Overhead relative to every base parameter, biases and norm affines included.
    pub percent_including_bias: f64,
    /// Per-task classifier parameters; never part of the percentages.
    pub head_params_per_task: Option<u64>,
    pub notes: Vec<String>,
}

/// Per-layer and total adapter counts for `inventory` at rank `rank`.
///
/// In lite mode conv layers keep only the rectification term and fc layers
/// only the scaling term.
pub fn audit(inventory: &[InventoryLayer], rank: usize, lite: bool) -> ParamAudit {
    audit_with_head(inventory, rank, lite, None)
}

pub fn audit_with_head(
    inventory: &[InventoryLayer],
    rank: usize,
    lite: bool,
    head_params_per_task: Option<u64>,
) -> ParamAudit {
    let k = rank as u64;
    let mut layers = Vec::with_capacity(inventory.len());
    for layer in inventory {
        let row = match layer.kind {
            InventoryKind::Conv { wf, hf, cin, cout, bias } => {
                let (wf, hf, cin, cout) = (wf as u64, hf as u64, cin as u64, cout as u64);
                let rect = k * (wf * cin + hf * cout);
                let scale = if lite { 0 } else { cout };
                LayerAudit {
                    name: layer.name.clone(),
                    kind: "conv",
                    base_weights: wf * hf * cin * cout,
                    base_bias: if bias { cout } else { 0 },
                    rectification: rect,
                    scaling: scale,
                    per_task_norm: 0,
                    adapter: rect + scale,
                    closed_form_numerator: Some(overhead_conv(wf, hf, cin, cout, k).numerator),
                }
            }
            InventoryKind::Fc { hin, hout, bias, adaptable } => {
                let (hin, hout) = (hin as u64, hout as u64);
                let (rect, scale) = match (adaptable, lite) {
                    (false, _) => (0, 0),
                    (true, true) => (0, hout),
                    (true, false) => (k * (hin + hout), hout),
                };
                LayerAudit {
                    name: layer.name.clone(),
                    kind: "fc",
                    base_weights: hin * hout,
                    base_bias: if bias { hout } else { 0 },
                    rectification: rect,
                    scaling: scale,
                    per_task_norm: 0,
                    adapter: rect + scale,
                    closed_form_numerator: adaptable.then(|| overhead_fc(hin, hout, k).numerator),
                }
            }
            InventoryKind::Norm { channels } => {
                let c = channels as u64;
                LayerAudit {
                    name: layer.name.clone(),
                    kind: "norm",
                    base_weights: 0,
                    base_bias: 2 * c,
                    rectification: 0,
                    scaling: 0,
                    per_task_norm: 2 * c,
                    adapter: 2 * c,
                    closed_form_numerator: None,
                }
            }
        };
        layers.push(row);
    }

    let sum = |f: fn(&LayerAudit) -> u64| layers.iter().map(f).sum::<u64>();
    let base_without_bias = sum(|l| l.base_weights);
    let base_with_bias = base_without_bias + sum(|l| l.base_bias);
    let rectification_total = sum(|l| l.rectification);
    let scaling_total = sum(|l| l.scaling);
    let per_task_norm_total = sum(|l| l.per_task_norm);
    let adapter_total = sum(|l| l.adapter);

    let mut notes = vec![
        "per-task classifier heads are excluded from every percentage".to_string(),
        "biases are trained with the base task, frozen afterwards and never rectified".to_string(),
    ];
    if per_task_norm_total > 0 {
        notes.push(format!(
            "normalization affine parameters ({per_task_norm_total}) are stored per task and counted as overhead"
        ));
    }
    if lite {
        notes.push("lite mode: conv layers carry rectifications only, fc layers scaling only".into());
    }

    let pct = |den: u64| if den == 0 { 0.0 } else { 100.0 * adapter_total as f64 / den as f64 };
    ParamAudit {
        rank,
        lite,
        percent_excluding_bias: pct(base_without_bias),
        percent_including_bias: pct(base_with_bias),
        layers,
        base_without_bias,
        base_with_bias,
        rectification_total,
        scaling_total,
        per_task_norm_total,
        adapter_total,
        head_params_per_task,
        notes,
    }
}

/// Parameterized layers of the CIFAR-style ResNet-18: 3×3 stem, four stages
/// of two basic blocks, 1×1 projection shortcuts, batch norm after every
/// convolution and a shared `512 → classes` classifier.
pub fn resnet18_inventory(classes: usize) -> Vec<InventoryLayer> {
    let mut inv = Vec::new();
    let push_conv = |inv: &mut Vec<InventoryLayer>, name: String, k: usize, cin: usize, cout: usize| {
        inv.push(InventoryLayer {
            name: name.clone(),
            kind: InventoryKind::Conv { wf: k, hf: k, cin, cout, bias: false },
        });
        inv.push(InventoryLayer { name: format!("{name}.bn"), kind: InventoryKind::Norm { channels: cout } });
    };
    push_conv(&mut inv, "conv1".into(), 3, 3, 64);
    let mut cin = 64;
    for (stage, &width) in [64usize, 128, 256, 512].iter().enumerate() {
        for block in 0..2 {
            let prefix = format!("layer{}.{}", stage + 1, block);
            let block_in = if block == 0 { cin } else { width };
            push_conv(&mut inv, format!("{prefix}.conv1"), 3, block_in, width);
            push_conv(&mut inv, format!("{prefix}.conv2"), 3, width, width);
            if block == 0 && block_in != width {
                push_conv(&mut inv, format!("{prefix}.shortcut"), 1, block_in, width);
            }
        }
        cin = width;
    }
    inv.push(InventoryLayer {
        name: "fc".into(),
        kind: InventoryKind::Fc { hin: 512, hout: classes, bias: true, adaptable: false },
    });
    inv
}
