//! Fully connected encoders and decoders, with optional per-layer adapters.

use crate::adapters::{scale_backward, RectificationGenerator, ScalingFactorGenerator, TargetShape};
use crate::error::{dim_err, Result};
use crate::ops::{affine, affine_backward, relu, relu_backward};
use crate::rng::SeededRng;
use crate::tensor::{checksum_all, Param, Scalar, Tensor};

use super::losses::{clamp_log_var, LatentGaussian, LOG_VAR_MAX, LOG_VAR_MIN};

/// `x·W + b` with `W: [in, out]`.
#[derive(Clone, Debug)]
pub struct FcLayer {
    pub weight: Param,
    pub bias: Param,
}

impl FcLayer {
    /// Glorot-uniform weights, zero bias.
    pub fn fresh(inputs: usize, outputs: usize, rng: &mut SeededRng) -> Self {
        let bound = (6.0 / (inputs + outputs) as Scalar).sqrt();
        Self {
            weight: Param::new(rng.uniform_tensor(&[inputs, outputs], -bound, bound)),
            bias: Param::new(Tensor::zeros(&[outputs])),
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn outputs(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn target(&self) -> TargetShape {
        TargetShape::Fc { hin: self.inputs(), hout: self.outputs() }
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    fn params(&self) -> [&Param; 2] {
        [&self.weight, &self.bias]
    }

    fn params_mut(&mut self) -> [&mut Param; 2] {
        [&mut self.weight, &mut self.bias]
    }
}

/// Rectification and scaling generators for one fc layer.
#[derive(Clone, Debug)]
pub struct FcAdapter {
    pub rect: Option<RectificationGenerator>,
    pub scale: Option<ScalingFactorGenerator>,
}

impl FcAdapter {
    /// Zero rectification and unit scaling; `lite` keeps scaling only.
    pub fn fresh(layer: &FcLayer, rank: usize, lite: bool, rng: &mut SeededRng) -> Result<Self> {
        let rect = if lite { None } else { Some(RectificationGenerator::fresh(layer.target(), rank, rng)?) };
        Ok(Self { rect, scale: Some(ScalingFactorGenerator::identity(layer.outputs())) })
    }

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

#[derive(Clone, Debug)]
struct FcCache {
    input: Tensor,
    weight: Tensor,
    unscaled: Tensor,
}

fn fc_forward(layer: &FcLayer, adapter: Option<&FcAdapter>, x: &Tensor) -> Result<(Tensor, FcCache)> {
    let weight = match adapter.and_then(|a| a.rect.as_ref()) {
        Some(r) => layer.weight.value.add(&r.generate()?)?,
        None => layer.weight.value.clone(),
    };
    let unscaled = affine(x, &weight, &layer.bias.value)?;
    let out = match adapter.and_then(|a| a.scale.as_ref()) {
        Some(s) => s.apply(&unscaled)?,
        None => unscaled.clone(),
    };
    Ok((out, FcCache { input: x.clone(), weight, unscaled }))
}

/// Accumulates into base params (no-op when frozen) and adapters; returns `dx`.
fn fc_backward(layer: &mut FcLayer, adapter: Option<&mut FcAdapter>, cache: &FcCache, d_out: &Tensor) -> Result<Tensor> {
    let mut adapter = adapter;
    let d_unscaled = match adapter.as_mut().and_then(|a| a.scale.as_mut()) {
        Some(s) => {
            let (d_f, d_o) = scale_backward(&cache.unscaled, &s.factors.value, d_out)?;
            s.factors.accumulate(&d_f)?;
            d_o
        }
        None => d_out.clone(),
    };
    let (dx, dw, db) = affine_backward(&cache.input, &cache.weight, &d_unscaled)?;
    if let Some(r) = adapter.and_then(|a| a.rect.as_mut()) {
        r.backward(&dw)?;
    }
    layer.weight.accumulate(&dw)?;
    layer.bias.accumulate(&db)?;
    Ok(dx)
}

/// `x → relu(fc) → (fc_mean, fc_log_var)`.
#[derive(Clone, Debug)]
pub struct Encoder {
    pub hidden: FcLayer,
    pub mean: FcLayer,
    pub log_var: FcLayer,
}

/// Adapters for the three layers of an [`Encoder`].
#[derive(Clone, Debug)]
pub struct EncoderAdapters {
    pub layers: [FcAdapter; 3],
}

impl EncoderAdapters {
    pub fn fresh(enc: &Encoder, rank: usize, lite: bool, rng: &mut SeededRng) -> Result<Self> {
        Ok(Self {
            layers: [
                FcAdapter::fresh(&enc.hidden, rank, lite, rng)?,
                FcAdapter::fresh(&enc.mean, rank, lite, rng)?,
                FcAdapter::fresh(&enc.log_var, rank, lite, rng)?,
            ],
        })
    }

    pub fn params(&self) -> Vec<&Param> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        self.layers.iter_mut().flat_map(|l| l.params_mut()).collect()
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    pub fn checksum(&self) -> String {
        checksum_all(self.params().into_iter().map(|p| &p.value))
    }
}

#[derive(Clone, Debug)]
pub struct EncoderCache {
    hidden: FcCache,
    hidden_pre: Tensor,
    mean: FcCache,
    log_var: FcCache,
    raw_log_var: Tensor,
}

impl Encoder {
    pub fn fresh(inputs: usize, hidden: usize, latent: usize, rng: &mut SeededRng) -> Self {
        Self {
            hidden: FcLayer::fresh(inputs, hidden, rng),
            mean: FcLayer::fresh(hidden, latent, rng),
            log_var: FcLayer::fresh(hidden, latent, rng),
        }
    }

    pub fn inputs(&self) -> usize {
        self.hidden.inputs()
    }

    pub fn latent_dim(&self) -> usize {
        self.mean.outputs()
    }

    pub fn forward(&self, adapters: Option<&EncoderAdapters>, x: &Tensor) -> Result<(LatentGaussian, EncoderCache)> {
        if x.shape().last() != Some(&self.inputs()) {
            return Err(dim_err(format!("encoder expects {} features, got {:?}", self.inputs(), x.shape())));
        }
        let a = |i: usize| adapters.map(|s| &s.layers[i]);
        let (hidden_pre, hidden) = fc_forward(&self.hidden, a(0), x)?;
        let h = relu(&hidden_pre);
        let (mean, mean_cache) = fc_forward(&self.mean, a(1), &h)?;
        let (raw_log_var, lv_cache) = fc_forward(&self.log_var, a(2), &h)?;
        let g = LatentGaussian::new(mean, clamp_log_var(&raw_log_var))?;
        Ok((g, EncoderCache { hidden, hidden_pre, mean: mean_cache, log_var: lv_cache, raw_log_var }))
    }

    /// Means only, for evaluation.
    pub fn encode_mean(&self, adapters: Option<&EncoderAdapters>, x: &Tensor) -> Result<Tensor> {
        Ok(self.forward(adapters, x)?.0.mean)
    }

    pub fn backward(
        &mut self,
        adapters: Option<&mut EncoderAdapters>,
        cache: &EncoderCache,
        d_mean: &Tensor,
        d_log_var: &Tensor,
    ) -> Result<Tensor> {
        // The clamp passes gradient only strictly inside its range.
        let d_raw = cache
            .raw_log_var
            .zip_map(d_log_var, |r, d| if r > LOG_VAR_MIN && r < LOG_VAR_MAX { d } else { 0.0 })?;
        let (a0, a1, a2) = match adapters {
            Some(s) => {
                let [x, y, z] = &mut s.layers;
                (Some(x), Some(y), Some(z))
            }
            None => (None, None, None),
        };
        let dh_mean = fc_backward(&mut self.mean, a1, &cache.mean, d_mean)?;
        let dh_lv = fc_backward(&mut self.log_var, a2, &cache.log_var, &d_raw)?;
        let dh = dh_mean.add(&dh_lv)?;
        let d_pre = relu_backward(&cache.hidden_pre, &dh)?;
        fc_backward(&mut self.hidden, a0, &cache.hidden, &d_pre)
    }

    pub fn params(&self) -> Vec<&Param> {
        [&self.hidden, &self.mean, &self.log_var].into_iter().flat_map(|l| l.params()).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        [&mut self.hidden, &mut self.mean, &mut self.log_var].into_iter().flat_map(|l| l.params_mut()).collect()
    }

    pub fn param_count(&self) -> usize {
        self.hidden.param_count() + self.mean.param_count() + self.log_var.param_count()
    }

    pub fn freeze(&mut self) {
        self.params_mut().into_iter().for_each(|p| p.freeze());
    }

    pub fn checksum(&self) -> String {
        checksum_all(self.params().into_iter().map(|p| &p.value))
    }
}

/// `z → relu(fc) → fc`.
#[derive(Clone, Debug)]
pub struct Decoder {
    pub hidden: FcLayer,
    pub out: FcLayer,
}

#[derive(Clone, Debug)]
pub struct DecoderCache {
    hidden: FcCache,
    hidden_pre: Tensor,
    out: FcCache,
}

impl Decoder {
    pub fn fresh(latent: usize, hidden: usize, outputs: usize, rng: &mut SeededRng) -> Self {
        Self { hidden: FcLayer::fresh(latent, hidden, rng), out: FcLayer::fresh(hidden, outputs, rng) }
    }

    pub fn forward(&self, z: &Tensor) -> Result<(Tensor, DecoderCache)> {
        let (hidden_pre, hidden) = fc_forward(&self.hidden, None, z)?;
        let (y, out) = fc_forward(&self.out, None, &relu(&hidden_pre))?;
        Ok((y, DecoderCache { hidden, hidden_pre, out }))
    }

    pub fn backward(&mut self, cache: &DecoderCache, d_y: &Tensor) -> Result<Tensor> {
        let dh = fc_backward(&mut self.out, None, &cache.out, d_y)?;
        let d_pre = relu_backward(&cache.hidden_pre, &dh)?;
        fc_backward(&mut self.hidden, None, &cache.hidden, &d_pre)
    }

    pub fn params(&self) -> Vec<&Param> {
        [&self.hidden, &self.out].into_iter().flat_map(|l| l.params()).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        [&mut self.hidden, &mut self.out].into_iter().flat_map(|l| l.params_mut()).collect()
    }

    pub fn param_count(&self) -> usize {
        self.hidden.param_count() + self.out.param_count()
    }
}
