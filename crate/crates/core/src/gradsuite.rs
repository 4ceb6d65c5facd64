//! The full finite-difference suite: every hand-written backward pass in the
//! crate checked against central differences on small random problems.
//!
//! Each check reduces the operator output to a scalar with a fixed random
//! weighting `L = Σ r ⊙ out`, so the whole Jacobian-vector product is tested.

use crate::adapters::{init_adapter_set, TaskAdapterSet};
use crate::error::Result;
use crate::gradcheck::{grad_check, GradReport};
use crate::gzsl::{
    distribution_alignment_backward, distribution_alignment_loss, kl_backward, kl_divergence, reparameterize,
    reparameterize_backward, Decoder, Encoder, EncoderAdapters, LatentGaussian,
};
use crate::model::{accumulate_adapters, build_reference_net, BaseNetwork, NetworkSpec, Preset};
use crate::ops::{
    affine, affine_backward, batch_cross_entropy, conv2d, conv2d_backward, l1, l1_backward, matmul, matmul_backward,
    softmax_cross_entropy, ConvGeometry,
};
use crate::rng::SeededRng;
use crate::tensor::{Param, Scalar, Tensor};

pub const STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;

fn weighted(out: &Tensor, r: &Tensor) -> Scalar {
    out.data().iter().zip(r.data()).map(|(a, b)| a * b).sum()
}

fn check<F>(name: &str, x: &Tensor, analytic: &Tensor, mut f: F) -> Result<GradReport>
where
    F: FnMut(&Tensor) -> Result<Scalar>,
{
    let shape = x.shape().to_vec();
    grad_check(
        name,
        |v| f(&Tensor::new(&shape, v.to_vec())?),
        x.data(),
        analytic.data(),
        STEP,
        TOLERANCE,
    )
}

fn conv_checks(rng: &mut SeededRng, out: &mut Vec<GradReport>) -> Result<()> {
    for (stride, padding) in [(1, 0), (1, 1), (2, 1)] {
        let geom = ConvGeometry::new(stride, padding)?;
        let x = rng.normal_tensor(&[4, 4, 2], 1.0);
        let k = rng.normal_tensor(&[3, 3, 2, 3], 1.0);
        let y = conv2d(&x, &k, geom)?;
        let r = rng.normal_tensor(y.shape(), 1.0);
        let (dx, dk) = conv2d_backward(&x, &k, geom, &r)?;
        let tag = format!("s{stride}p{padding}");
        out.push(check(&format!("conv2d/input/{tag}"), &x, &dx, |v| Ok(weighted(&conv2d(v, &k, geom)?, &r)))?);
        out.push(check(&format!("conv2d/kernel/{tag}"), &k, &dk, |v| Ok(weighted(&conv2d(&x, v, geom)?, &r)))?);
    }
    Ok(())
}

fn dense_checks(rng: &mut SeededRng, out: &mut Vec<GradReport>) -> Result<()> {
    let x = rng.normal_tensor(&[3, 4], 1.0);
    let w = rng.normal_tensor(&[4, 5], 1.0);
    let b = rng.normal_tensor(&[5], 1.0);
    let r = rng.normal_tensor(&[3, 5], 1.0);
    let (dx, dw, db) = affine_backward(&x, &w, &r)?;
    out.push(check("affine/input", &x, &dx, |v| Ok(weighted(&affine(v, &w, &b)?, &r)))?);
    out.push(check("affine/weight", &w, &dw, |v| Ok(weighted(&affine(&x, v, &b)?, &r)))?);
    out.push(check("affine/bias", &b, &db, |v| Ok(weighted(&affine(&x, &w, v)?, &r)))?);

    let a = rng.normal_tensor(&[3, 2], 1.0);
    let m = rng.normal_tensor(&[2, 4], 1.0);
    let rm = rng.normal_tensor(&[3, 4], 1.0);
    let (da, dm) = matmul_backward(&a, &m, &rm)?;
    out.push(check("matmul/left", &a, &da, |v| Ok(weighted(&matmul(v, &m)?, &rm)))?);
    out.push(check("matmul/right", &m, &dm, |v| Ok(weighted(&matmul(&a, v)?, &rm)))?);

    let logits = rng.normal_tensor(&[6], 2.0);
    let (_, g) = softmax_cross_entropy(logits.data(), 4)?;
    let g = Tensor::new(&[6], g)?;
    out.push(check("softmax_cross_entropy", &logits, &g, |v| Ok(softmax_cross_entropy(v.data(), 4)?.0))?);

    let batch = rng.normal_tensor(&[3, 4], 2.0);
    let labels = [1, 0, 3];
    let (_, gb) = batch_cross_entropy(&batch, &labels)?;
    out.push(check("batch_cross_entropy", &batch, &gb, |v| Ok(batch_cross_entropy(v, &labels)?.0))?);

    let p = rng.normal_tensor(&[2, 5], 1.0);
    let q = rng.normal_tensor(&[2, 5], 1.0);
    out.push(check("l1", &p, &l1_backward(&p, &q)?, |v| l1(v, &q))?);
    Ok(())
}

/// Adapter-set gradients for LM, RM, F and the head through a whole network.
fn network_checks(
    name: &str,
    spec: &NetworkSpec,
    input_shape: &[usize],
    rng: &mut SeededRng,
    out: &mut Vec<GradReport>,
) -> Result<()> {
    let base = BaseNetwork::init(spec, rng)?;
    let targets = spec.adaptable_targets()?;
    let mut set = init_adapter_set(2, &targets, (base.feature_dim(), 3), 2, false, None, rng)?;
    // Move away from the identity so every factor gets a nonzero gradient.
    for p in set.params_mut() {
        let noise = rng.normal_tensor(p.shape(), 0.3);
        p.value.add_assign(&noise)?;
    }
    let mut shape = vec![2];
    shape.extend_from_slice(input_shape);
    let x = rng.normal_tensor(&shape, 1.0);
    let labels = [0, 2];
    let loss_of = |s: &TaskAdapterSet| -> Result<Scalar> {
        let (logits, _) = base.forward(Some(s), &s.head, &x, None)?;
        Ok(batch_cross_entropy(&logits, &labels)?.0)
    };
    let (logits, cache) = base.forward(Some(&set), &set.head, &x, None)?;
    let (_, d_logits) = batch_cross_entropy(&logits, &labels)?;
    let grads = base.backward(Some(&set), &set.head, &cache, &d_logits)?;
    for p in set.params_mut() {
        p.zero_grad();
    }
    accumulate_adapters(&mut set, &grads)?;
    let mut names = Vec::new();
    for l in &set.layers {
        let at = l.target.layer;
        if l.rect.is_some() {
            names.push(format!("layer{at}/lm"));
            names.push(format!("layer{at}/rm"));
        }
        if l.scale.is_some() {
            names.push(format!("layer{at}/scale"));
        }
    }
    names.push("head/weight".into());
    names.push("head/bias".into());
    for (i, pname) in names.iter().enumerate() {
        let (value, grad) = {
            let p: &Param = &set.params_mut()[i];
            (p.value.clone(), p.grad.clone())
        };
        let label = format!("{name}/{pname}");
        let mut probe = set.clone();
        out.push(check(&label, &value, &grad, |v| {
            probe.params_mut()[i].value = v.clone();
            loss_of(&probe)
        })?);
    }
    Ok(())
}

fn gaussian(rng: &mut SeededRng, rows: usize, d: usize) -> Result<LatentGaussian> {
    LatentGaussian::new(rng.normal_tensor(&[rows, d], 1.0), rng.normal_tensor(&[rows, d], 0.5))
}

fn latent_checks(rng: &mut SeededRng, out: &mut Vec<GradReport>) -> Result<()> {
    let g = gaussian(rng, 2, 3)?;
    let eps = rng.normal_tensor(&[2, 3], 1.0);
    let r = rng.normal_tensor(&[2, 3], 1.0);
    let (dm, dl) = reparameterize_backward(&g, &eps, &r)?;
    let lv = g.log_var.clone();
    let mean = g.mean.clone();
    out.push(check("reparameterize/mean", &g.mean, &dm, |v| {
        Ok(weighted(&reparameterize(&LatentGaussian::new(v.clone(), lv.clone())?, &eps)?, &r))
    })?);
    out.push(check("reparameterize/log_var", &g.log_var, &dl, |v| {
        Ok(weighted(&reparameterize(&LatentGaussian::new(mean.clone(), v.clone())?, &eps)?, &r))
    })?);

    let (km, kl) = kl_backward(&g);
    out.push(check("kl/mean", &g.mean, &km, |v| Ok(kl_divergence(&LatentGaussian::new(v.clone(), lv.clone())?)))?);
    out.push(check("kl/log_var", &g.log_var, &kl, |v| {
        Ok(kl_divergence(&LatentGaussian::new(mean.clone(), v.clone())?))
    })?);

    let h = gaussian(rng, 2, 3)?;
    let [ma, la, mb, lb] = distribution_alignment_backward(&g, &h)?;
    let (hm, hl) = (h.mean.clone(), h.log_var.clone());
    let w2 = |a: (&Tensor, &Tensor), b: (&Tensor, &Tensor)| -> Result<Scalar> {
        distribution_alignment_loss(
            &LatentGaussian::new(a.0.clone(), a.1.clone())?,
            &LatentGaussian::new(b.0.clone(), b.1.clone())?,
        )
    };
    out.push(check("wasserstein/mean_a", &g.mean, &ma, |v| w2((v, &lv), (&hm, &hl)))?);
    out.push(check("wasserstein/log_var_a", &g.log_var, &la, |v| w2((&mean, v), (&hm, &hl)))?);
    out.push(check("wasserstein/mean_b", &h.mean, &mb, |v| w2((&mean, &lv), (v, &hl)))?);
    out.push(check("wasserstein/log_var_b", &h.log_var, &lb, |v| w2((&mean, &lv), (&hm, v)))?);
    Ok(())
}

/// Adapted encoder and decoder parameters under a weighted-output loss.
fn encoder_checks(rng: &mut SeededRng, out: &mut Vec<GradReport>) -> Result<()> {
    let mut enc = Encoder::fresh(5, 4, 3, rng);
    enc.freeze();
    let mut ad = EncoderAdapters::fresh(&enc, 2, false, rng)?;
    for p in ad.params_mut() {
        let noise = rng.normal_tensor(p.shape(), 0.3);
        p.value.add_assign(&noise)?;
    }
    let x = rng.normal_tensor(&[3, 5], 1.0);
    let (rm, rl) = (rng.normal_tensor(&[3, 3], 1.0), rng.normal_tensor(&[3, 3], 1.0));
    let (g, cache) = enc.forward(Some(&ad), &x)?;
    enc.backward(Some(&mut ad), &cache, &rm, &rl)?;
    let n = ad.params().len();
    for i in 0..n {
        let (value, grad) = (ad.params()[i].value.clone(), ad.params()[i].grad.clone());
        let mut probe = ad.clone();
        out.push(check(&format!("encoder_adapter/param{i}"), &value, &grad, |v| {
            probe.params_mut()[i].value = v.clone();
            let (g, _) = enc.forward(Some(&probe), &x)?;
            Ok(weighted(&g.mean, &rm) + weighted(&g.log_var, &rl))
        })?);
    }
    drop(g);

    let mut dec = Decoder::fresh(3, 4, 5, rng);
    let z = rng.normal_tensor(&[2, 3], 1.0);
    let r = rng.normal_tensor(&[2, 5], 1.0);
    let (_, dcache) = dec.forward(&z)?;
    let dz = dec.backward(&dcache, &r)?;
    out.push(check("decoder/input", &z, &dz, |v| Ok(weighted(&dec.forward(v)?.0, &r)))?);
    let n = dec.params().len();
    for i in 0..n {
        let (value, grad) = (dec.params()[i].value.clone(), dec.params()[i].grad.clone());
        let mut probe = dec.clone();
        out.push(check(&format!("decoder/param{i}"), &value, &grad, |v| {
            probe.params_mut()[i].value = v.clone();
            Ok(weighted(&probe.forward(&z)?.0, &r))
        })?);
    }
    Ok(())
}

/// Runs every check; the reports carry pass/fail against [`TOLERANCE`].
pub fn run_gradient_suite(seed: u64) -> Result<Vec<GradReport>> {
    let mut rng = SeededRng::new(seed);
    let mut out = Vec::new();
    conv_checks(&mut rng, &mut out)?;
    dense_checks(&mut rng, &mut out)?;
    let cnn = build_reference_net(Preset::TinyCnn, &[4, 4, 1], 3, None)?;
    network_checks("tiny_cnn", &cnn, &[4, 4, 1], &mut rng, &mut out)?;
    let mlp = build_reference_net(Preset::TinyMlp, &[5], 3, Some(4))?;
    network_checks("tiny_mlp", &mlp, &[5], &mut rng, &mut out)?;
    latent_checks(&mut rng, &mut out)?;
    encoder_checks(&mut rng, &mut out)?;
    Ok(out)
}
