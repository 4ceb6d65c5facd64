//! Shared fixtures and an independent dense-forward oracle.
#![allow(dead_code)]

use rkr_core::adapters::{Head, TaskAdapterSet};
use rkr_core::harness::SynthSpec;
use rkr_core::model::{build_reference_net, BaseNetwork, LayerSpec, NetworkSpec, Preset};
use rkr_core::train::{SequenceOptions, TrainConfig, Variant};
use rkr_core::{Scalar, SeededRng};

/// Five two-class tasks in 64 dimensions, 6σ apart, with conflicting offsets.
pub fn continual_data(seed: u64) -> SynthSpec {
    SynthSpec {
        tasks: 5,
        classes_per_task: 2,
        input_shape: vec![64],
        separation: 6.0,
        conflict_mode: true,
        nuisance: 2.0,
        train_per_class: 100,
        test_per_class: 50,
        seed,
    }
}

pub fn continual_net() -> NetworkSpec {
    build_reference_net(Preset::TinyMlp, &[64], 16, None).unwrap()
}

pub fn sequence(variant: Variant, seed: u64, forward_transfer: bool) -> SequenceOptions {
    SequenceOptions { variant, forward_transfer, train: vec![TrainConfig::default()], seed }
}

/// Sets every generator of `set` to random values (scales near one).
pub fn randomize(set: &mut TaskAdapterSet, rng: &mut SeededRng) {
    for l in &mut set.layers {
        if let Some(r) = &mut l.rect {
            for p in r.params_mut() {
                p.value = rng.normal_tensor(p.value.shape(), 0.3);
            }
        }
        if let Some(s) = &mut l.scale {
            let n = s.factors.value.len();
            s.factors.value = rng.uniform_tensor(&[n], 0.5, 1.5);
        }
    }
}

/// Result of the oracle on one example.
pub struct OracleOutput {
    pub logits: Vec<f64>,
    /// Output elements scaled per adapted layer.
    pub scaled: u64,
    /// Multiplies spent by the base convolutions and fc layers.
    pub base_mults: u64,
}

/// Rectification entry for weight index `(r, c)` of the factor matrix, by explicit summation.
fn rect_entry(lm: &[f64], rm: &[f64], k: usize, cols: usize, r: usize, c: usize) -> f64 {
    (0..k).map(|j| lm[r * k + j] * rm[j * cols + c]).sum()
}

/// Naive forward pass straight from the layer list, with `Θ + LM·RM`
/// assembled entry by entry and scaling applied after the bias.
pub fn oracle_forward(base: &BaseNetwork, set: Option<&TaskAdapterSet>, head: &Head, x: &[Scalar]) -> OracleOutput {
    let spec = base.spec();
    let mut shape = spec.input.clone();
    let mut act: Vec<f64> = x.iter().map(|&v| v as f64).collect();
    let (mut scaled, mut base_mults) = (0u64, 0u64);
    for (i, layer) in spec.layers.iter().enumerate() {
        let adapter = set.and_then(|s| s.layers.iter().find(|l| l.target.layer == i));
        let params = base.layer_params()[i].as_ref();
        match layer {
            LayerSpec::Conv { kernel_w, kernel_h, out_channels, stride, padding, .. } => {
                let (h, w, ci) = (shape[0], shape[1], shape[2]);
                let (wf, hf, co) = (*kernel_w, *kernel_h, *out_channels);
                let p = params.unwrap();
                let theta: Vec<f64> = p.weight.value.data().iter().map(|&v| v as f64).collect();
                let bias: Vec<f64> = p.bias.value.data().iter().map(|&v| v as f64).collect();
                let mut kernel = theta.clone();
                if let Some(r) = adapter.and_then(|a| a.rect.as_ref()) {
                    let [lm, rm] = r.params();
                    let lm: Vec<f64> = lm.value.data().iter().map(|&v| v as f64).collect();
                    let rm: Vec<f64> = rm.value.data().iter().map(|&v| v as f64).collect();
                    let k = r.rank();
                    for a in 0..wf {
                        for b in 0..hf {
                            for c in 0..ci {
                                for o in 0..co {
                                    let idx = ((a * hf + b) * ci + c) * co + o;
                                    kernel[idx] += rect_entry(&lm, &rm, k, hf * co, a * ci + c, b * co + o);
                                }
                            }
                        }
                    }
                }
                let oh = (h + 2 * padding - hf) / stride + 1;
                let ow = (w + 2 * padding - wf) / stride + 1;
                let mut out = vec![0.0; oh * ow * co];
                for y in 0..oh {
                    for xx in 0..ow {
                        for o in 0..co {
                            let mut acc = bias[o];
                            for b in 0..hf {
                                for a in 0..wf {
                                    let iy = (y * stride + b) as isize - *padding as isize;
                                    let ix = (xx * stride + a) as isize - *padding as isize;
                                    if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                        continue;
                                    }
                                    for c in 0..ci {
                                        let v = act[(iy as usize * w + ix as usize) * ci + c];
                                        acc += v * kernel[((a * hf + b) * ci + c) * co + o];
                                    }
                                }
                            }
                            out[(y * ow + xx) * co + o] = acc;
                        }
                    }
                }
                base_mults += (oh * ow * co * wf * hf * ci) as u64;
                if let Some(s) = adapter.and_then(|a| a.scale.as_ref()) {
                    for (j, v) in out.iter_mut().enumerate() {
                        *v *= s.factors.value.data()[j % co] as f64;
                    }
                    scaled += out.len() as u64;
                }
                act = out;
                shape = vec![oh, ow, co];
            }
            LayerSpec::Fc { out: hout, .. } => {
                let hin = act.len();
                let p = params.unwrap();
                let mut weight: Vec<f64> = p.weight.value.data().iter().map(|&v| v as f64).collect();
                if let Some(r) = adapter.and_then(|a| a.rect.as_ref()) {
                    let [lm, rm] = r.params();
                    let lm: Vec<f64> = lm.value.data().iter().map(|&v| v as f64).collect();
                    let rm: Vec<f64> = rm.value.data().iter().map(|&v| v as f64).collect();
                    for a in 0..hin {
                        for o in 0..*hout {
                            weight[a * hout + o] += rect_entry(&lm, &rm, r.rank(), *hout, a, o);
                        }
                    }
                }
                let mut out: Vec<f64> = p.bias.value.data().iter().map(|&v| v as f64).collect();
                for (a, &v) in act.iter().enumerate() {
                    for o in 0..*hout {
                        out[o] += v * weight[a * hout + o];
                    }
                }
                base_mults += (hin * hout) as u64;
                if let Some(s) = adapter.and_then(|a| a.scale.as_ref()) {
                    for (o, v) in out.iter_mut().enumerate() {
                        *v *= s.factors.value.data()[o] as f64;
                    }
                    scaled += *hout as u64;
                }
                act = out;
                shape = vec![*hout];
            }
            LayerSpec::Pool => {
                let (h, w, c) = (shape[0], shape[1], shape[2]);
                let (oh, ow) = (h / 2, w / 2);
                let mut out = vec![f64::NEG_INFINITY; oh * ow * c];
                for y in 0..oh * 2 {
                    for xx in 0..ow * 2 {
                        for ch in 0..c {
                            let o = &mut out[((y / 2) * ow + xx / 2) * c + ch];
                            *o = o.max(act[(y * w + xx) * c + ch]);
                        }
                    }
                }
                act = out;
                shape = vec![oh, ow, c];
            }
            LayerSpec::Activation => act.iter_mut().for_each(|v| *v = v.max(0.0)),
            LayerSpec::Flatten => shape = vec![act.len()],
        }
    }
    let classes = head.classes();
    let hw = head.weight.value.data();
    let mut logits: Vec<f64> = head.bias.value.data().iter().map(|&v| v as f64).collect();
    for (a, &v) in act.iter().enumerate() {
        for o in 0..classes {
            logits[o] += v * hw[a * classes + o] as f64;
        }
    }
    OracleOutput { logits, scaled, base_mults }
}

/// A small conv stack with stride, padding, pooling and a non-adaptable layer.
pub fn mixed_cnn() -> NetworkSpec {
    NetworkSpec {
        input: vec![9, 7, 2],
        layers: vec![
            LayerSpec::Conv { kernel_w: 3, kernel_h: 2, out_channels: 4, stride: 1, padding: 1, adaptable: true },
            LayerSpec::Activation,
            LayerSpec::Pool,
            LayerSpec::Conv { kernel_w: 2, kernel_h: 3, out_channels: 5, stride: 2, padding: 0, adaptable: true },
            LayerSpec::Activation,
            LayerSpec::Flatten,
            LayerSpec::Fc { out: 6, adaptable: false },
            LayerSpec::Activation,
            LayerSpec::fc(4),
        ],
    }
}
