//! Low-rank weight rectifications.

use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Result, RkrError};
use crate::ops::{matmul, matmul_nt, matmul_tn};
use crate::rng::SeededRng;
use crate::tensor::{Param, Scalar, Tensor};

/// Shape of the layer weight a generator targets.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum TargetShape {
    /// Kernel `W_f × H_f × C_in × C_out`.
    Conv { wf: usize, hf: usize, cin: usize, cout: usize },
    /// Weight `H_in × H_out`.
    Fc { hin: usize, hout: usize },
}

impl TargetShape {
    /// `(rows of LM, columns of RM)`.
    pub fn factor_dims(&self) -> (usize, usize) {
        match *self {
            TargetShape::Conv { wf, hf, cin, cout } => (wf * cin, hf * cout),
            TargetShape::Fc { hin, hout } => (hin, hout),
        }
    }

    pub fn weight_shape(&self) -> Vec<usize> {
        match *self {
            TargetShape::Conv { wf, hf, cin, cout } => vec![wf, hf, cin, cout],
            TargetShape::Fc { hin, hout } => vec![hin, hout],
        }
    }

    pub fn weight_len(&self) -> usize {
        self.weight_shape().iter().product()
    }

    /// Feature maps (conv) or units (fc) produced by the layer.
    pub fn out_units(&self) -> usize {
        match *self {
            TargetShape::Conv { cout, .. } => cout,
            TargetShape::Fc { hout, .. } => hout,
        }
    }

    pub fn is_conv(&self) -> bool {
        matches!(self, TargetShape::Conv { .. })
    }

    /// Flat index into the target weight of matrix entry `(r, c)`.
    ///
    /// For conv targets the row decodes as `(w_f, c_in) = (r / C_in, r % C_in)`
    /// and the column as `(h_f, c_out) = (c / C_out, c % C_out)`.
    #[inline]
    pub fn weight_index(&self, r: usize, c: usize) -> usize {
        match *self {
            TargetShape::Conv { hf, cin, cout, .. } => {
                let (w, ci) = (r / cin, r % cin);
                let (h, co) = (c / cout, c % cout);
                ((w * hf + h) * cin + ci) * cout + co
            }
            TargetShape::Fc { hout, .. } => r * hout + c,
        }
    }

    /// Scatters a `rows_L × cols_R` matrix into the target weight layout.
    pub fn matrix_to_weight(&self, m: &Tensor) -> Result<Tensor> {
        let (rows, cols) = self.factor_dims();
        if m.shape() != [rows, cols] {
            return Err(RkrError::Invariant(format!(
                "rectification matrix {:?} does not match {rows}×{cols}",
                m.shape()
            )));
        }
        let mut out = vec![0.0; rows * cols];
        let src = m.data();
        for r in 0..rows {
            for c in 0..cols {
                out[self.weight_index(r, c)] = src[r * cols + c];
            }
        }
        Tensor::new(&self.weight_shape(), out)
    }

    /// Inverse of [`TargetShape::matrix_to_weight`].
    pub fn weight_to_matrix(&self, w: &Tensor) -> Result<Tensor> {
        if w.shape() != self.weight_shape().as_slice() {
            return Err(dim_err(format!(
                "weight {:?} does not match target {:?}",
                w.shape(),
                self.weight_shape()
            )));
        }
        let (rows, cols) = self.factor_dims();
        let src = w.data();
        let mut out = vec![0.0; rows * cols];
        for r in 0..rows {
            for c in 0..cols {
                out[r * cols + c] = src[self.weight_index(r, c)];
            }
        }
        Tensor::new(&[rows, cols], out)
    }
}

/// Factor pair `(LM, RM)` whose product, reshaped, rectifies one layer weight.
#[derive(Clone, Debug)]
pub struct RectificationGenerator {
    pub lm: Param,
    pub rm: Param,
    target: TargetShape,
    rank: usize,
}

impl RectificationGenerator {
    /// LM uniform in `±1/sqrt(rows_L)`, RM zero, so the initial rectification is zero.
    pub fn fresh(target: TargetShape, rank: usize, rng: &mut SeededRng) -> Result<Self> {
        if rank == 0 {
            return Err(RkrError::Config("rank K must be positive".into()));
        }
        let (rows, cols) = target.factor_dims();
        let bound = 1.0 / (rows as Scalar).sqrt();
        let lm = rng.uniform_tensor(&[rows, rank], -bound, bound);
        let rm = Tensor::zeros(&[rank, cols]);
        Ok(Self { lm: Param::new(lm), rm: Param::new(rm), target, rank })
    }

    /// Builds a generator from explicit factors.
    pub fn from_factors(target: TargetShape, lm: Tensor, rm: Tensor) -> Result<Self> {
        let (rows, cols) = target.factor_dims();
        let rank = match *lm.shape() {
            [r, k] if r == rows && k > 0 => k,
            _ => {
                return Err(dim_err(format!(
                    "LM {:?} does not match {rows}×K for target {target:?}",
                    lm.shape()
                )))
            }
        };
        if rm.shape() != [rank, cols] {
            return Err(dim_err(format!(
                "RM {:?} does not match {rank}×{cols}",
                rm.shape()
            )));
        }
        Ok(Self { lm: Param::new(lm), rm: Param::new(rm), target, rank })
    }

    pub fn target(&self) -> TargetShape {
        self.target
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn param_count(&self) -> usize {
        self.lm.len() + self.rm.len()
    }

    /// `LM·RM` as a `rows_L × cols_R` matrix.
    pub fn generate_matrix(&self) -> Result<Tensor> {
        matmul(&self.lm.value, &self.rm.value)
    }

    /// The rectification in the target weight's shape.
    pub fn generate(&self) -> Result<Tensor> {
        let m = self.generate_matrix()?;
        let r = self.target.matrix_to_weight(&m)?;
        debug_assert_eq!(r.len(), self.target.weight_len());
        Ok(r)
    }

    /// Accumulates `dLM = dR·RMᵀ` and `dRM = LMᵀ·dR` given `dR` in weight layout.
    pub fn backward(&mut self, d_weight: &Tensor) -> Result<()> {
        let d_mat = self.target.weight_to_matrix(d_weight)?;
        let d_lm = matmul_nt(&d_mat, &self.rm.value)?;
        let d_rm = matmul_tn(&self.lm.value, &d_mat)?;
        self.lm.accumulate(&d_lm)?;
        self.rm.accumulate(&d_rm)
    }

    pub fn params_mut(&mut self) -> [&mut Param; 2] {
        [&mut self.lm, &mut self.rm]
    }

    pub fn params(&self) -> [&Param; 2] {
        [&self.lm, &self.rm]
    }
}

/// `Θᵗ = Θ ⊕ R`. The base value is left untouched.
pub fn adapt_weights(base: &Param, rectification: &Tensor) -> Result<Tensor> {
    base.value.add(rectification)
}
