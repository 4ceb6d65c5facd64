//! Latent Gaussians, the reparameterization trick, and the CADA-VAE loss terms.
//!
//! All losses are sums over the batch; callers divide by the batch size.

use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Result, RkrError};
use crate::ops::{l1, l1_backward};
use crate::rng::SeededRng;
use crate::tensor::{Scalar, Tensor};

pub const LOG_VAR_MIN: Scalar = -10.0;
pub const LOG_VAR_MAX: Scalar = 10.0;

/// Diagonal Gaussian `N(mean, exp(log_var))`, one row per example.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentGaussian {
    pub mean: Tensor,
    pub log_var: Tensor,
}

impl LatentGaussian {
    pub fn new(mean: Tensor, log_var: Tensor) -> Result<Self> {
        mean.same_shape(&log_var)?;
        if !mean.all_finite() || !log_var.all_finite() {
            return Err(RkrError::Numerical("latent Gaussian has non-finite mean or log-variance".into()));
        }
        Ok(Self { mean, log_var })
    }

    pub fn latent_dim(&self) -> usize {
        *self.mean.shape().last().unwrap_or(&0)
    }

    pub fn rows(&self) -> usize {
        self.mean.len() / self.latent_dim().max(1)
    }

    pub fn variance(&self) -> Tensor {
        self.log_var.map(Scalar::exp)
    }

    pub fn std(&self) -> Tensor {
        self.log_var.map(|v| (0.5 * v).exp())
    }
}

pub fn clamp_log_var(raw: &Tensor) -> Tensor {
    raw.map(|v| v.clamp(LOG_VAR_MIN, LOG_VAR_MAX))
}

/// `z = mean + exp(½·log_var) ⊙ eps`.
pub fn reparameterize(g: &LatentGaussian, eps: &Tensor) -> Result<Tensor> {
    g.mean.same_shape(eps)?;
    let std = g.std();
    let mut z = g.mean.clone();
    for ((zi, &s), &e) in z.data_mut().iter_mut().zip(std.data()).zip(eps.data()) {
        *zi += s * e;
    }
    Ok(z)
}

/// `(dmean, dlog_var)` of [`reparameterize`] for a fixed `eps`.
pub fn reparameterize_backward(g: &LatentGaussian, eps: &Tensor, d_z: &Tensor) -> Result<(Tensor, Tensor)> {
    g.mean.same_shape(d_z)?;
    let std = g.std();
    let half_std_eps = std.zip_map(eps, |s, e| 0.5 * s * e)?;
    Ok((d_z.clone(), half_std_eps.zip_map(d_z, |a, d| a * d)?))
}

/// Draws `eps ~ N(0, I)` and returns `(z, eps)`.
pub fn sample(g: &LatentGaussian, rng: &mut SeededRng) -> Result<(Tensor, Tensor)> {
    let eps = rng.normal_tensor(g.mean.shape(), 1.0);
    Ok((reparameterize(g, &eps)?, eps))
}

/// `KL(g ‖ N(0, I)) = ½ Σ (mean² + var − 1 − log var)`, summed over all rows.
pub fn kl_divergence(g: &LatentGaussian) -> Scalar {
    g.mean
        .data()
        .iter()
        .zip(g.log_var.data())
        .map(|(&m, &lv)| 0.5 * (m * m + lv.exp() - 1.0 - lv))
        .sum()
}

/// `(dmean, dlog_var)` of [`kl_divergence`].
pub fn kl_backward(g: &LatentGaussian) -> (Tensor, Tensor) {
    (g.mean.clone(), g.log_var.map(|lv| 0.5 * (lv.exp() - 1.0)))
}

/// `L1(x, reconstruction) + beta·KL(g)`.
pub fn vae_loss(x: &Tensor, reconstruction: &Tensor, g: &LatentGaussian, beta: Scalar) -> Result<Scalar> {
    if !(beta >= 0.0) {
        return Err(RkrError::Config(format!("KL weight {beta} must be non-negative")));
    }
    Ok(l1(reconstruction, x)? + beta * kl_divergence(g))
}

fn rows_of(t: &Tensor) -> usize {
    if t.ndim() <= 1 {
        1
    } else {
        t.shape()[0]
    }
}

/// `L1(D_a(z_v), c) + L1(D_v(z_a), x)` over paired rows.
pub fn cross_alignment_loss(da_of_zv: &Tensor, c: &Tensor, dv_of_za: &Tensor, x: &Tensor) -> Result<Scalar> {
    let n = rows_of(x);
    if rows_of(c) != n || rows_of(da_of_zv) != n || rows_of(dv_of_za) != n {
        return Err(RkrError::Pairing(format!(
            "cross alignment needs paired rows: {} features, {} embeddings",
            n,
            rows_of(c)
        )));
    }
    Ok(l1(da_of_zv, c)? + l1(dv_of_za, x)?)
}

/// Gradients of [`cross_alignment_loss`] w.r.t. both decoder outputs.
pub fn cross_alignment_backward(da_of_zv: &Tensor, c: &Tensor, dv_of_za: &Tensor, x: &Tensor) -> Result<(Tensor, Tensor)> {
    Ok((l1_backward(da_of_zv, c)?, l1_backward(dv_of_za, x)?))
}

fn check_pair(a: &LatentGaussian, b: &LatentGaussian) -> Result<usize> {
    if a.mean.shape() != b.mean.shape() {
        return Err(dim_err(format!(
            "latent shapes differ: {:?} vs {:?}",
            a.mean.shape(),
            b.mean.shape()
        )));
    }
    Ok(a.latent_dim())
}

/// Per-row 2-Wasserstein distance between diagonal Gaussians,
/// `sqrt(‖μ_a − μ_b‖² + ‖σ_a − σ_b‖²)`.
pub fn wasserstein_rows(a: &LatentGaussian, b: &LatentGaussian) -> Result<Vec<Scalar>> {
    let d = check_pair(a, b)?;
    let (sa, sb) = (a.std(), b.std());
    Ok(a.mean
        .data()
        .chunks(d)
        .zip(b.mean.data().chunks(d))
        .zip(sa.data().chunks(d).zip(sb.data().chunks(d)))
        .map(|((ma, mb), (xa, xb))| {
            let m: Scalar = ma.iter().zip(mb).map(|(p, q)| (p - q) * (p - q)).sum();
            let s: Scalar = xa.iter().zip(xb).map(|(p, q)| (p - q) * (p - q)).sum();
            (m + s).sqrt()
        })
        .collect())
}

/// Sum over rows of [`wasserstein_rows`].
pub fn distribution_alignment_loss(a: &LatentGaussian, b: &LatentGaussian) -> Result<Scalar> {
    Ok(wasserstein_rows(a, b)?.iter().sum())
}

/// `(dmean_a, dlog_var_a, dmean_b, dlog_var_b)` of [`distribution_alignment_loss`].
/// Rows with zero distance contribute zero gradient.
pub fn distribution_alignment_backward(a: &LatentGaussian, b: &LatentGaussian) -> Result<[Tensor; 4]> {
    let d = check_pair(a, b)?;
    let dist = wasserstein_rows(a, b)?;
    let (sa, sb) = (a.std(), b.std());
    let shape = a.mean.shape();
    let (mut dma, mut dla) = (Tensor::zeros(shape), Tensor::zeros(shape));
    let (mut dmb, mut dlb) = (Tensor::zeros(shape), Tensor::zeros(shape));
    for (r, &w) in dist.iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        for j in r * d..(r + 1) * d {
            let dm = (a.mean.data()[j] - b.mean.data()[j]) / w;
            let ds = (sa.data()[j] - sb.data()[j]) / w;
            dma.data_mut()[j] = dm;
            dmb.data_mut()[j] = -dm;
            dla.data_mut()[j] = ds * 0.5 * sa.data()[j];
            dlb.data_mut()[j] = -ds * 0.5 * sb.data()[j];
        }
    }
    Ok([dma, dla, dmb, dlb])
}

/// Piecewise-linear warm-up: `rate · clamp(e − start, 0, end − start)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnnealSchedule {
    pub start_epoch: usize,
    pub end_epoch: usize,
    pub rate: f64,
}

impl AnnealSchedule {
    pub fn value(&self, epoch: usize) -> f64 {
        let span = self.end_epoch.saturating_sub(self.start_epoch);
        self.rate * epoch.saturating_sub(self.start_epoch).min(span) as f64
    }

    pub fn validate(&self) -> Result<()> {
        if self.end_epoch < self.start_epoch || !(self.rate >= 0.0) {
            return Err(RkrError::Config(format!("invalid anneal schedule {self:?}")));
        }
        Ok(())
    }
}

/// Harmonic mean of unseen and seen accuracy; 0 when both are 0.
pub fn harmonic_mean(u: f64, s: f64) -> f64 {
    if u + s > 0.0 {
        2.0 * u * s / (u + s)
    } else {
        0.0
    }
}
