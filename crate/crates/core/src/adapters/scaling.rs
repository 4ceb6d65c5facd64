//! Per-feature-map and per-unit output scaling.

use crate::error::{dim_err, Result};
use crate::tensor::{Param, Tensor};

/// Multiplicative factors for the output of one layer.
///
/// The factor vector runs along the last axis of the layer output, which is
/// the channel axis of an `H×W×C` map and the unit axis of an fc output.
#[derive(Clone, Debug)]
pub struct ScalingFactorGenerator {
    pub factors: Param,
}

impl ScalingFactorGenerator {
    /// All-ones factors, the multiplicative identity.
    pub fn identity(units: usize) -> Self {
        Self { factors: Param::new(Tensor::ones(&[units])) }
    }

    pub fn from_factors(factors: Tensor) -> Result<Self> {
        if factors.ndim() != 1 {
            return Err(dim_err(format!("scaling factors must be 1-D, got {:?}", factors.shape())));
        }
        Ok(Self { factors: Param::new(factors) })
    }

    pub fn units(&self) -> usize {
        self.factors.len()
    }

    fn check(&self, output: &Tensor) -> Result<usize> {
        let units = *output.shape().last().unwrap_or(&0);
        if units != self.units() {
            return Err(dim_err(format!(
                "scaling has {} factors but layer output {:?} has {units} channels/units",
                self.units(),
                output.shape()
            )));
        }
        Ok(units)
    }

    /// `Oᵗ = O ⊗ F` along the last axis.
    pub fn apply(&self, output: &Tensor) -> Result<Tensor> {
        let units = self.check(output)?;
        let mut out = output.clone();
        let f = self.factors.value.data();
        for chunk in out.data_mut().chunks_mut(units) {
            for (o, &s) in chunk.iter_mut().zip(f) {
                *o *= s;
            }
        }
        Ok(out)
    }

    /// Given the unscaled output `O` and the upstream gradient, accumulates
    /// `dF` and returns `dO`.
    pub fn backward(&mut self, output: &Tensor, d_scaled: &Tensor) -> Result<Tensor> {
        self.check(output)?;
        let (d_f, d_out) = scale_backward(output, &self.factors.value, d_scaled)?;
        self.factors.accumulate(&d_f)?;
        Ok(d_out)
    }
}

/// Gradients of `O ⊗ F` along the last axis: `(dF, dO)`.
pub fn scale_backward(output: &Tensor, factors: &Tensor, d_scaled: &Tensor) -> Result<(Tensor, Tensor)> {
    output.same_shape(d_scaled)?;
    let units = factors.len();
    if output.shape().last() != Some(&units) {
        return Err(dim_err(format!("{units} factors for output {:?}", output.shape())));
    }
    let mut d_f = vec![0.0; units];
    let mut d_out = d_scaled.clone();
    let f = factors.data();
    for (oc, gc) in output.data().chunks(units).zip(d_out.data_mut().chunks_mut(units)) {
        for c in 0..units {
            d_f[c] += oc[c] * gc[c];
            gc[c] *= f[c];
        }
    }
    Ok((Tensor::new(&[units], d_f)?, d_out))
}

/// Functional form of [`ScalingFactorGenerator::apply`].
pub fn apply_scaling(output: &Tensor, scaling: &ScalingFactorGenerator) -> Result<Tensor> {
    scaling.apply(output)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ones_leave_output_unchanged() {
        let o = Tensor::new(&[2, 2, 3], (0..12).map(|v| v as f64 as _).collect()).unwrap();
        let s = ScalingFactorGenerator::identity(3);
        assert!(s.apply(&o).unwrap().bit_eq(&o));
    }

    #[test]
    fn conv_broadcast_multiply() {
        let o = Tensor::new(&[2, 2, 1], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let s = ScalingFactorGenerator::from_factors(Tensor::vector(&[2.0])).unwrap();
        assert_eq!(s.apply(&o).unwrap().data(), &[2.0, 4.0, 6.0, 8.0]);
    }

    #[test]
    fn fc_elementwise_multiply() {
        let s = ScalingFactorGenerator::from_factors(Tensor::vector(&[1.0, 0.0, 2.0])).unwrap();
        let y = apply_scaling(&Tensor::vector(&[1.0, 2.0, 3.0]), &s).unwrap();
        assert_eq!(y.data(), &[1.0, 0.0, 6.0]);
    }

    #[test]
    fn length_mismatch_is_dimension_error() {
        let s = ScalingFactorGenerator::identity(2);
        assert!(s.apply(&Tensor::vector(&[1.0, 2.0, 3.0])).is_err());
    }

    #[test]
    fn perturbing_one_factor_touches_one_channel() {
        let o = Tensor::new(&[2, 2, 3], (1..=12).map(|v| v as f64 as _).collect()).unwrap();
        let base = ScalingFactorGenerator::identity(3).apply(&o).unwrap();
        let bumped =
            ScalingFactorGenerator::from_factors(Tensor::vector(&[1.0, 1.5, 1.0])).unwrap().apply(&o).unwrap();
        for (i, (a, b)) in base.data().iter().zip(bumped.data()).enumerate() {
            assert_eq!(a == b, i % 3 != 1);
        }
    }
}
