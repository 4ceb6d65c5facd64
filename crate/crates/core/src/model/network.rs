//! Base network parameters and the (optionally adapted) forward/backward pass.

use crate::adapters::{scale_backward, Head, TaskAdapterSet};
use crate::error::{dim_err, Result, RkrError};
use crate::ops::{self, ConvGeometry};
use crate::rng::SeededRng;
use crate::tensor::{checksum_all, Param, Scalar, Tensor};

use super::spec::{LayerOp, LayerPlan, NetworkSpec};

/// Weight and bias of a parameterized layer.
#[derive(Clone, Debug)]
pub struct LayerParams {
    pub weight: Param,
    pub bias: Param,
}

/// The network trained on the first task. Frozen afterwards.
#[derive(Clone, Debug)]
pub struct BaseNetwork {
    spec: NetworkSpec,
    plan: Vec<LayerPlan>,
    params: Vec<Option<LayerParams>>,
}

/// Multiplications spent on adapters during one forward call.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct AdapterOps {
    /// `LM·RM` products computed (`rows_L·K·cols_R` per layer).
    pub rectification: u64,
    /// Output scaling multiplies, summed over the batch.
    pub scaling: u64,
}

/// Activations retained for the backward pass.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    batch: usize,
    inputs: Vec<Tensor>,
    /// Unscaled outputs of layers that carry scaling factors.
    unscaled: Vec<Option<Tensor>>,
    weights: Vec<Option<Tensor>>,
    argmax: Vec<Vec<Vec<usize>>>,
    pub features: Tensor,
    pub ops: AdapterOps,
}

/// Gradients of one parameterized layer.
#[derive(Clone, Debug)]
pub struct LayerGrad {
    /// Gradient with respect to the effective weight `Θ + R`.
    pub weight: Tensor,
    pub bias: Tensor,
    pub scale: Option<Tensor>,
}

#[derive(Clone, Debug)]
pub struct NetGrads {
    pub layers: Vec<Option<LayerGrad>>,
    pub head_weight: Tensor,
    pub head_bias: Tensor,
}

fn fan_in_uniform(rng: &mut SeededRng, shape: &[usize], fan_in: usize) -> Tensor {
    let bound = (6.0 / fan_in as Scalar).sqrt();
    rng.uniform_tensor(shape, -bound, bound)
}

fn split_batch(t: &Tensor) -> Result<(usize, usize)> {
    let b = *t.shape().first().ok_or_else(|| dim_err("empty shape"))?;
    Ok((b, t.len() / b))
}

fn example(t: &Tensor, i: usize, shape: &[usize]) -> Tensor {
    let n = t.len() / t.shape()[0];
    Tensor::new(shape, t.data()[i * n..(i + 1) * n].to_vec()).expect("per-example shape")
}

fn with_batch(batch: usize, shape: &[usize]) -> Vec<usize> {
    let mut s = Vec::with_capacity(shape.len() + 1);
    s.push(batch);
    s.extend_from_slice(shape);
    s
}

fn add_bias_last_axis(t: &mut Tensor, bias: &Tensor) {
    let c = bias.len();
    for chunk in t.data_mut().chunks_mut(c) {
        for (o, &b) in chunk.iter_mut().zip(bias.data()) {
            *o += b;
        }
    }
}

fn sum_last_axis(t: &Tensor, c: usize) -> Tensor {
    let mut out = vec![0.0; c];
    for chunk in t.data().chunks(c) {
        for (o, &v) in out.iter_mut().zip(chunk) {
            *o += v;
        }
    }
    Tensor::new(&[c], out).expect("positive width")
}

fn conv_forward_batch(input: &Tensor, in_shape: &[usize], w: &Tensor, geom: ConvGeometry, out_shape: &[usize]) -> Result<Tensor> {
    let (b, _) = split_batch(input)?;
    let mut data = Vec::with_capacity(b * out_shape.iter().product::<usize>());
    for i in 0..b {
        let y = ops::conv2d(&example(input, i, in_shape), w, geom)?;
        data.extend_from_slice(y.data());
    }
    Tensor::new(&with_batch(b, out_shape), data)
}

impl BaseNetwork {
    /// Initializes weights fan-in uniformly (`±sqrt(6/fan_in)`) and biases at zero.
    pub fn init(spec: &NetworkSpec, rng: &mut SeededRng) -> Result<Self> {
        let plan = spec.plan()?;
        let params = plan
            .iter()
            .map(|p| {
                p.target().map(|t| {
                    let shape = t.weight_shape();
                    let fan_in = t.weight_len() / t.out_units();
                    LayerParams {
                        weight: Param::new(fan_in_uniform(rng, &shape, fan_in)),
                        bias: Param::new(Tensor::zeros(&[t.out_units()])),
                    }
                })
            })
            .collect();
        Ok(Self { spec: spec.clone(), plan, params })
    }

    /// Assembles a network from stored layer parameters.
    pub fn from_params(spec: &NetworkSpec, params: Vec<Option<LayerParams>>) -> Result<Self> {
        let plan = spec.plan()?;
        if params.len() != plan.len() {
            return Err(dim_err(format!("{} parameter slots for {} layers", params.len(), plan.len())));
        }
        for (i, (p, slot)) in plan.iter().zip(&params).enumerate() {
            match (p.target(), slot) {
                (Some(t), Some(lp)) => {
                    if lp.weight.shape() != t.weight_shape().as_slice() || lp.bias.shape() != [t.out_units()] {
                        return Err(dim_err(format!("layer {i}: stored parameters do not match {t:?}")));
                    }
                }
                (None, None) => {}
                _ => return Err(dim_err(format!("layer {i}: parameter slot mismatch"))),
            }
        }
        Ok(Self { spec: spec.clone(), plan, params })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn plan(&self) -> &[LayerPlan] {
        &self.plan
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.spec.input
    }

    pub fn feature_dim(&self) -> usize {
        self.plan.last().map(|p| p.out_len()).unwrap_or(0)
    }

    pub fn layer_params(&self) -> &[Option<LayerParams>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        self.params
            .iter_mut()
            .flatten()
            .flat_map(|lp| [&mut lp.weight, &mut lp.bias])
            .collect()
    }

    pub fn params(&self) -> Vec<&Param> {
        self.params.iter().flatten().flat_map(|lp| [&lp.weight, &lp.bias]).collect()
    }

    pub fn freeze(&mut self) {
        for p in self.params_mut() {
            p.freeze();
        }
    }

    pub fn is_frozen(&self) -> bool {
        self.params().iter().all(|p| p.frozen)
    }

    /// Checksum of every base weight and bias.
    pub fn checksum(&self) -> String {
        checksum_all(self.params().into_iter().map(|p| &p.value))
    }

    fn check_input(&self, input: &Tensor) -> Result<usize> {
        let (b, n) = split_batch(input)?;
        if input.shape()[1..] != self.spec.input[..] {
            return Err(dim_err(format!(
                "input batch {:?} does not match network input {:?} ({n} values per example)",
                input.shape(),
                self.spec.input
            )));
        }
        Ok(b)
    }

    /// Effective weight of layer `i`: `Θ + R` when the adapters rectify it.
    pub(crate) fn effective_weight(&self, i: usize, adapters: Option<&TaskAdapterSet>, ops: &mut AdapterOps) -> Result<Tensor> {
        let lp = self.params[i].as_ref().ok_or_else(|| RkrError::Invariant(format!("layer {i} has no weights")))?;
        match adapters.and_then(|a| a.layer(i)).and_then(|l| l.rect.as_ref()) {
            Some(rect) => {
                let (rows, cols) = rect.target().factor_dims();
                ops.rectification += (rows * rect.rank() * cols) as u64;
                lp.weight.value.add(&rect.generate()?)
            }
            None => Ok(lp.weight.value.clone()),
        }
    }

    /// Forward pass over a batch `[B, input...]`, returning task logits.
    ///
    /// `weights` optionally overrides the effective weight per layer (used by
    /// materialized networks); otherwise rectifications are generated on the fly.
    pub fn forward(
        &self,
        adapters: Option<&TaskAdapterSet>,
        head: &Head,
        input: &Tensor,
        weights: Option<&[Option<Tensor>]>,
    ) -> Result<(Tensor, ForwardCache)> {
        let batch = self.check_input(input)?;
        if head.features() != self.feature_dim() {
            return Err(dim_err(format!(
                "head expects {} features, network produces {}",
                head.features(),
                self.feature_dim()
            )));
        }
        let mut ops = AdapterOps::default();
        let n = self.plan.len();
        let mut inputs = Vec::with_capacity(n);
        let mut unscaled = vec![None; n];
        let mut eff = vec![None; n];
        let mut argmax = vec![Vec::new(); n];
        let mut x = input.clone();
        for (i, p) in self.plan.iter().enumerate() {
            let y = match &p.op {
                LayerOp::Conv { .. } | LayerOp::Fc { .. } => {
                    let w = match weights.and_then(|w| w[i].clone()) {
                        Some(w) => w,
                        None => self.effective_weight(i, adapters, &mut ops)?,
                    };
                    let bias = &self.params[i].as_ref().expect("checked by effective_weight").bias.value;
                    let mut out = match &p.op {
                        LayerOp::Conv { geom, .. } => conv_forward_batch(&x, &p.in_shape, &w, *geom, &p.out_shape)?,
                        _ => ops::matmul(&x, &w)?,
                    };
                    add_bias_last_axis(&mut out, bias);
                    let scale = adapters.and_then(|a| a.layer(i)).and_then(|l| l.scale.as_ref());
                    let y = match scale {
                        Some(s) => {
                            ops.scaling += out.len() as u64;
                            let scaled = s.apply(&out)?;
                            unscaled[i] = Some(out);
                            scaled
                        }
                        None => out,
                    };
                    eff[i] = Some(w);
                    y
                }
                LayerOp::Pool => {
                    let mut data = Vec::with_capacity(batch * p.out_len());
                    for b in 0..batch {
                        let (y, arg) = ops::max_pool2(&example(&x, b, &p.in_shape))?;
                        data.extend_from_slice(y.data());
                        argmax[i].push(arg);
                    }
                    Tensor::new(&with_batch(batch, &p.out_shape), data)?
                }
                LayerOp::Relu => ops::relu(&x),
                LayerOp::Flatten => x.clone().reshape(&with_batch(batch, &p.out_shape))?,
            };
            inputs.push(std::mem::replace(&mut x, y));
        }
        let logits = ops::matmul(&x, &head.weight.value)?;
        let mut logits = logits;
        add_bias_last_axis(&mut logits, &head.bias.value);
        let cache = ForwardCache { batch, inputs, unscaled, weights: eff, argmax, features: x, ops };
        Ok((logits, cache))
    }

    /// Backward pass from `d_logits` (`[B, classes]`), producing gradients for
    /// effective weights, biases, scaling factors and the head.
    pub fn backward(&self, adapters: Option<&TaskAdapterSet>, head: &Head, cache: &ForwardCache, d_logits: &Tensor) -> Result<NetGrads> {
        let head_weight = ops::matmul_tn(&cache.features, d_logits)?;
        let head_bias = sum_last_axis(d_logits, head.classes());
        let mut g = ops::matmul_nt(d_logits, &head.weight.value)?;
        let mut layers: Vec<Option<LayerGrad>> = vec![None; self.plan.len()];
        let batch = cache.batch;
        for (i, p) in self.plan.iter().enumerate().rev() {
            let x = &cache.inputs[i];
            let need_dx = i > 0;
            g = match &p.op {
                LayerOp::Conv { .. } | LayerOp::Fc { .. } => {
                    let mut d_scale = None;
                    if let Some(out) = &cache.unscaled[i] {
                        let s = adapters
                            .and_then(|a| a.layer(i))
                            .and_then(|l| l.scale.as_ref())
                            .ok_or_else(|| RkrError::State(format!("layer {i}: cache/adapters mismatch")))?;
                        let (d_f, d_o) = scale_backward(out, &s.factors.value, &g)?;
                        d_scale = Some(d_f);
                        g = d_o;
                    }
                    let w = cache.weights[i].as_ref().expect("forward stored the weight");
                    let units = *p.out_shape.last().expect("non-empty shape");
                    let d_bias = sum_last_axis(&g, units);
                    let (dx, dw) = match &p.op {
                        LayerOp::Conv { geom, .. } => {
                            let mut dw = Tensor::zeros(w.shape());
                            let mut dx = Vec::with_capacity(x.len());
                            for b in 0..batch {
                                let (dxi, dwi) = ops::conv2d_backward(
                                    &example(x, b, &p.in_shape),
                                    w,
                                    *geom,
                                    &example(&g, b, &p.out_shape),
                                )?;
                                dw.add_assign(&dwi)?;
                                if need_dx {
                                    dx.extend_from_slice(dxi.data());
                                }
                            }
                            let dx = if need_dx { Some(Tensor::new(x.shape(), dx)?) } else { None };
                            (dx, dw)
                        }
                        _ => {
                            let dw = ops::matmul_tn(x, &g)?;
                            let dx = if need_dx { Some(ops::matmul_nt(&g, w)?) } else { None };
                            (dx, dw)
                        }
                    };
                    layers[i] = Some(LayerGrad { weight: dw, bias: d_bias, scale: d_scale });
                    match dx {
                        Some(dx) => dx,
                        None => break,
                    }
                }
                LayerOp::Pool => {
                    let mut dx = Vec::with_capacity(x.len());
                    for b in 0..batch {
                        let d = ops::max_pool2_backward(&p.in_shape, &cache.argmax[i][b], &example(&g, b, &p.out_shape))?;
                        dx.extend_from_slice(d.data());
                    }
                    Tensor::new(x.shape(), dx)?
                }
                LayerOp::Relu => ops::relu_backward(x, &g)?,
                LayerOp::Flatten => g.reshape(x.shape())?,
            };
        }
        Ok(NetGrads { layers, head_weight, head_bias })
    }

    /// Adds layer gradients into the base params. Frozen params ignore them.
    pub fn accumulate(&mut self, grads: &NetGrads) -> Result<()> {
        for (slot, g) in self.params.iter_mut().zip(&grads.layers) {
            if let (Some(lp), Some(g)) = (slot, g) {
                lp.weight.accumulate(&g.weight)?;
                lp.bias.accumulate(&g.bias)?;
            }
        }
        Ok(())
    }

    /// Feature vectors `[B, feature_dim]` for a batch.
    pub fn features(&self, adapters: Option<&TaskAdapterSet>, head: &Head, input: &Tensor) -> Result<Tensor> {
        Ok(self.forward(adapters, head, input, None)?.1.features)
    }

    /// Scaling multiplies per example when every adaptable layer is scaled:
    /// `Σ C_out·H'·W'` over conv layers plus `Σ H_out` over fc layers.
    pub fn scaling_ops_per_example(&self, adapters: &TaskAdapterSet) -> u64 {
        self.plan
            .iter()
            .enumerate()
            .filter(|(i, _)| adapters.layer(*i).is_some_and(|l| l.scale.is_some()))
            .map(|(_, p)| p.out_len() as u64)
            .sum()
    }

    /// Multiply count of the base network per example (conv and fc layers).
    pub fn base_multiplies_per_example(&self) -> u64 {
        self.plan
            .iter()
            .filter_map(|p| p.target().map(|t| (p.out_len() * t.weight_len() / t.out_units()) as u64))
            .sum()
    }
}

/// Routes network gradients into an adapter set: rectification factors via
/// the effective-weight gradient, scaling factors directly, and the head.
pub fn accumulate_adapters(adapters: &mut TaskAdapterSet, grads: &NetGrads) -> Result<()> {
    for layer in adapters.layers.iter_mut() {
        let Some(g) = grads.layers.get(layer.target.layer).and_then(|g| g.as_ref()) else {
            continue;
        };
        if let Some(rect) = layer.rect.as_mut() {
            rect.backward(&g.weight)?;
        }
        if let (Some(s), Some(d)) = (layer.scale.as_mut(), g.scale.as_ref()) {
            s.factors.accumulate(d)?;
        }
    }
    accumulate_head(&mut adapters.head, grads)
}

pub fn accumulate_head(head: &mut Head, grads: &NetGrads) -> Result<()> {
    head.weight.accumulate(&grads.head_weight)?;
    head.bias.accumulate(&grads.head_bias)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adapters::init_adapter_set;
    use crate::model::spec::{build_reference_net, LayerSpec, Preset};

    #[test]
    fn input_geometry_checked() {
        let spec = build_reference_net(Preset::TinyMlp, &[4], 3, Some(5)).unwrap();
        let mut rng = SeededRng::new(0);
        let net = BaseNetwork::init(&spec, &mut rng).unwrap();
        let head = Head::fresh(3, 2, &mut rng);
        assert!(net.forward(None, &head, &Tensor::zeros(&[2, 5]), None).is_err());
        assert!(net.forward(None, &head, &Tensor::zeros(&[2, 4]), None).is_ok());
    }

    #[test]
    fn doubling_final_scaling_doubles_features() {
        let spec = NetworkSpec { input: vec![3], layers: vec![LayerSpec::fc(4), LayerSpec::fc(2)] };
        let mut rng = SeededRng::new(5);
        let net = BaseNetwork::init(&spec, &mut rng).unwrap();
        let targets = spec.adaptable_targets().unwrap();
        let mut set = init_adapter_set(2, &targets, (2, 2), 1, false, None, &mut rng).unwrap();
        let x = rng.normal_tensor(&[4, 3], 1.0);
        let f1 = net.features(Some(&set), &set.head, &x).unwrap();
        set.layers[1].scale.as_mut().unwrap().factors.value.fill(2.0);
        let f2 = net.features(Some(&set), &set.head, &x).unwrap();
        assert!(f2.bit_eq(&f1.scale(2.0)));
    }

    #[test]
    fn frozen_base_ignores_gradients() {
        let spec = build_reference_net(Preset::TinyMlp, &[4], 3, Some(5)).unwrap();
        let mut rng = SeededRng::new(2);
        let mut net = BaseNetwork::init(&spec, &mut rng).unwrap();
        net.freeze();
        let head = Head::fresh(3, 2, &mut rng);
        let x = rng.normal_tensor(&[3, 4], 1.0);
        let (logits, cache) = net.forward(None, &head, &x, None).unwrap();
        let grads = net.backward(None, &head, &cache, &logits).unwrap();
        net.accumulate(&grads).unwrap();
        assert!(net.params().iter().all(|p| p.grad.norm_sq() == 0.0));
    }
}
