//! Forward and backward kernels for the fixed operator set.
//!
//! Every operator is a pure function of its inputs. Backward functions take
//! the upstream gradient and return gradients for each differentiable input.

use crate::error::{dim_err, Result, RkrError};
use crate::tensor::{Scalar, Tensor};

fn expect_2d(t: &Tensor, what: &str) -> Result<(usize, usize)> {
    match *t.shape() {
        [r, c] => Ok((r, c)),
        _ => Err(dim_err(format!("{what} must be 2-D, got {:?}", t.shape()))),
    }
}

/// `C = A·B` for `A: m×k`, `B: k×n`.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = expect_2d(a, "matmul lhs")?;
    let (k2, n) = expect_2d(b, "matmul rhs")?;
    if k != k2 {
        return Err(dim_err(format!(
            "matmul inner dimensions disagree: {:?} @ {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let (ad, bd) = (a.data(), b.data());
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let x = ad[i * k + p];
            if x == 0.0 {
                continue;
            }
            let brow = &bd[p * n..(p + 1) * n];
            for (o, &y) in row.iter_mut().zip(brow) {
                *o += x * y;
            }
        }
    }
    Tensor::new(&[m, n], out)
}

/// `Aᵀ·B` without materializing the transpose.
pub fn matmul_tn(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (k, m) = expect_2d(a, "matmul_tn lhs")?;
    let (k2, n) = expect_2d(b, "matmul_tn rhs")?;
    if k != k2 {
        return Err(dim_err(format!(
            "matmul_tn leading dimensions disagree: {:?}ᵀ @ {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let (ad, bd) = (a.data(), b.data());
    let mut out = vec![0.0; m * n];
    for p in 0..k {
        let brow = &bd[p * n..(p + 1) * n];
        for i in 0..m {
            let x = ad[p * m + i];
            if x == 0.0 {
                continue;
            }
            let row = &mut out[i * n..(i + 1) * n];
            for (o, &y) in row.iter_mut().zip(brow) {
                *o += x * y;
            }
        }
    }
    Tensor::new(&[m, n], out)
}

/// `A·Bᵀ` without materializing the transpose.
pub fn matmul_nt(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = expect_2d(a, "matmul_nt lhs")?;
    let (n, k2) = expect_2d(b, "matmul_nt rhs")?;
    if k != k2 {
        return Err(dim_err(format!(
            "matmul_nt trailing dimensions disagree: {:?} @ {:?}ᵀ",
            a.shape(),
            b.shape()
        )));
    }
    let (ad, bd) = (a.data(), b.data());
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let arow = &ad[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &bd[j * k..(j + 1) * k];
            out[i * n + j] = arow.iter().zip(brow).map(|(x, y)| x * y).sum();
        }
    }
    Tensor::new(&[m, n], out)
}

/// Gradients of `C = A·B`: `dA = dC·Bᵀ`, `dB = Aᵀ·dC`.
pub fn matmul_backward(a: &Tensor, b: &Tensor, d_out: &Tensor) -> Result<(Tensor, Tensor)> {
    Ok((matmul_nt(d_out, b)?, matmul_tn(a, d_out)?))
}

/// Stride and zero padding of a 2-D convolution, shared by both spatial axes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub stride: usize,
    pub padding: usize,
}

impl ConvGeometry {
    pub fn new(stride: usize, padding: usize) -> Result<Self> {
        if stride == 0 {
            return Err(RkrError::Geometry("stride must be positive".into()));
        }
        Ok(Self { stride, padding })
    }

    /// Output extent along one axis.
    pub fn out_extent(&self, input: usize, kernel: usize) -> Result<usize> {
        let padded = input + 2 * self.padding;
        if kernel == 0 || padded < kernel {
            return Err(RkrError::Geometry(format!(
                "kernel extent {kernel} does not fit padded input extent {padded}"
            )));
        }
        Ok((padded - kernel) / self.stride + 1)
    }
}

/// Kernel dimensions `(W_f, H_f, C_in, C_out)` of a `[W_f, H_f, C_in, C_out]` tensor.
fn kernel_dims(kernel: &Tensor) -> Result<(usize, usize, usize, usize)> {
    match *kernel.shape() {
        [wf, hf, ci, co] => Ok((wf, hf, ci, co)),
        _ => Err(dim_err(format!(
            "conv kernel must be 4-D (W_f×H_f×C_in×C_out), got {:?}",
            kernel.shape()
        ))),
    }
}

fn image_dims(input: &Tensor) -> Result<(usize, usize, usize)> {
    match *input.shape() {
        [h, w, c] => Ok((h, w, c)),
        _ => Err(dim_err(format!("conv input must be H×W×C, got {:?}", input.shape()))),
    }
}

/// Cross-correlation of an `H×W×C_in` image with a `W_f×H_f×C_in×C_out` kernel.
///
/// `out[oh, ow, co] = Σ in[oh·s + hf − p, ow·s + wf − p, ci] · k[wf, hf, ci, co]`,
/// with out-of-range input positions reading as zero.
pub fn conv2d(input: &Tensor, kernel: &Tensor, geom: ConvGeometry) -> Result<Tensor> {
    let (h, w, ci) = image_dims(input)?;
    let (wf, hf, kci, co) = kernel_dims(kernel)?;
    if ci != kci {
        return Err(dim_err(format!(
            "conv input channels {ci} != kernel channels {kci} (input {:?}, kernel {:?})",
            input.shape(),
            kernel.shape()
        )));
    }
    let oh_n = geom.out_extent(h, hf)?;
    let ow_n = geom.out_extent(w, wf)?;
    let (x, k) = (input.data(), kernel.data());
    let mut out = vec![0.0; oh_n * ow_n * co];
    let pad = geom.padding as isize;
    for oh in 0..oh_n {
        for ow in 0..ow_n {
            let o_base = (oh * ow_n + ow) * co;
            for khf in 0..hf {
                let ih = (oh * geom.stride + khf) as isize - pad;
                if ih < 0 || ih >= h as isize {
                    continue;
                }
                for kwf in 0..wf {
                    let iw = (ow * geom.stride + kwf) as isize - pad;
                    if iw < 0 || iw >= w as isize {
                        continue;
                    }
                    let i_base = (ih as usize * w + iw as usize) * ci;
                    for c in 0..ci {
                        let xv = x[i_base + c];
                        if xv == 0.0 {
                            continue;
                        }
                        let k_base = ((kwf * hf + khf) * ci + c) * co;
                        let krow = &k[k_base..k_base + co];
                        for (o, &kv) in out[o_base..o_base + co].iter_mut().zip(krow) {
                            *o += xv * kv;
                        }
                    }
                }
            }
        }
    }
    Tensor::new(&[oh_n, ow_n, co], out)
}

/// Gradients of [`conv2d`] with respect to input and kernel.
pub fn conv2d_backward(
    input: &Tensor,
    kernel: &Tensor,
    geom: ConvGeometry,
    d_out: &Tensor,
) -> Result<(Tensor, Tensor)> {
    let (h, w, ci) = image_dims(input)?;
    let (wf, hf, _, co) = kernel_dims(kernel)?;
    let oh_n = geom.out_extent(h, hf)?;
    let ow_n = geom.out_extent(w, wf)?;
    if d_out.shape() != [oh_n, ow_n, co] {
        return Err(dim_err(format!(
            "conv upstream gradient {:?} != output shape {:?}",
            d_out.shape(),
            [oh_n, ow_n, co]
        )));
    }
    let (x, k, g) = (input.data(), kernel.data(), d_out.data());
    let mut dx = vec![0.0; x.len()];
    let mut dk = vec![0.0; k.len()];
    let pad = geom.padding as isize;
    for oh in 0..oh_n {
        for ow in 0..ow_n {
            let o_base = (oh * ow_n + ow) * co;
            let grow = &g[o_base..o_base + co];
            for khf in 0..hf {
                let ih = (oh * geom.stride + khf) as isize - pad;
                if ih < 0 || ih >= h as isize {
                    continue;
                }
                for kwf in 0..wf {
                    let iw = (ow * geom.stride + kwf) as isize - pad;
                    if iw < 0 || iw >= w as isize {
                        continue;
                    }
                    let i_base = (ih as usize * w + iw as usize) * ci;
                    for c in 0..ci {
                        let k_base = ((kwf * hf + khf) * ci + c) * co;
                        let xv = x[i_base + c];
                        let mut acc = 0.0;
                        for j in 0..co {
                            acc += grow[j] * k[k_base + j];
                            dk[k_base + j] += xv * grow[j];
                        }
                        dx[i_base + c] += acc;
                    }
                }
            }
        }
    }
    Ok((Tensor::new(input.shape(), dx)?, Tensor::new(kernel.shape(), dk)?))
}

/// Leading batch extent and per-example width of an affine input.
fn affine_dims(input: &Tensor) -> Result<(usize, usize, bool)> {
    match *input.shape() {
        [n] => Ok((1, n, false)),
        [b, n] => Ok((b, n, true)),
        _ => Err(dim_err(format!(
            "affine input must be 1-D or batch×features, got {:?}",
            input.shape()
        ))),
    }
}

/// `out = input·W + b` for `input: [H_in]` or `[B, H_in]`, `W: [H_in, H_out]`.
pub fn affine(input: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (b, n_in, batched) = affine_dims(input)?;
    let (w_in, w_out) = expect_2d(weight, "affine weight")?;
    if w_in != n_in || bias.shape() != [w_out] {
        return Err(dim_err(format!(
            "affine shapes disagree: input {:?}, weight {:?}, bias {:?}",
            input.shape(),
            weight.shape(),
            bias.shape()
        )));
    }
    let x = Tensor::new(&[b, n_in], input.data().to_vec())?;
    let mut out = matmul(&x, weight)?;
    for row in out.data_mut().chunks_mut(w_out) {
        for (o, &bv) in row.iter_mut().zip(bias.data()) {
            *o += bv;
        }
    }
    if batched {
        Ok(out)
    } else {
        out.reshape(&[w_out])
    }
}

/// Gradients of [`affine`]: `(d_input, d_weight, d_bias)`.
pub fn affine_backward(
    input: &Tensor,
    weight: &Tensor,
    d_out: &Tensor,
) -> Result<(Tensor, Tensor, Tensor)> {
    let (b, n_in, _) = affine_dims(input)?;
    let (_, w_out) = expect_2d(weight, "affine weight")?;
    if d_out.len() != b * w_out {
        return Err(dim_err(format!(
            "affine upstream gradient {:?} does not match batch {b} × {w_out}",
            d_out.shape()
        )));
    }
    let x = Tensor::new(&[b, n_in], input.data().to_vec())?;
    let g = Tensor::new(&[b, w_out], d_out.data().to_vec())?;
    let dx = matmul_nt(&g, weight)?.reshape(input.shape())?;
    let dw = matmul_tn(&x, &g)?;
    let mut db = vec![0.0; w_out];
    for row in g.data().chunks(w_out) {
        for (d, &v) in db.iter_mut().zip(row) {
            *d += v;
        }
    }
    Ok((dx, dw, Tensor::new(&[w_out], db)?))
}

/// Numerically stable softmax of one logit row.
pub fn softmax(logits: &[Scalar]) -> Vec<Scalar> {
    let m = logits.iter().copied().fold(Scalar::NEG_INFINITY, Scalar::max);
    let e: Vec<Scalar> = logits.iter().map(|&z| (z - m).exp()).collect();
    let s: Scalar = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// `−log softmax(logits)[label]` and its gradient `softmax − one_hot(label)`.
pub fn softmax_cross_entropy(logits: &[Scalar], label: usize) -> Result<(Scalar, Vec<Scalar>)> {
    if label >= logits.len() {
        return Err(RkrError::Index(format!(
            "label {label} out of range for {} classes",
            logits.len()
        )));
    }
    let m = logits.iter().copied().fold(Scalar::NEG_INFINITY, Scalar::max);
    let lse = m + logits.iter().map(|&z| (z - m).exp()).sum::<Scalar>().ln();
    let loss = lse - logits[label];
    let mut grad = softmax(logits);
    grad[label] -= 1.0;
    Ok((loss, grad))
}

/// Mean cross-entropy over a `[B, C]` batch; the gradient is already divided by `B`.
pub fn batch_cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<(Scalar, Tensor)> {
    let (b, c) = expect_2d(logits, "logits")?;
    if labels.len() != b {
        return Err(dim_err(format!("{} labels for a batch of {b}", labels.len())));
    }
    let inv = 1.0 / b as Scalar;
    let mut total = 0.0;
    let mut grad = Vec::with_capacity(b * c);
    for (row, &y) in logits.data().chunks(c).zip(labels) {
        let (l, g) = softmax_cross_entropy(row, y)?;
        total += l;
        grad.extend(g.into_iter().map(|v| v * inv));
    }
    Ok((total * inv, Tensor::new(&[b, c], grad)?))
}

pub fn relu(x: &Tensor) -> Tensor {
    x.map(|v| if v > 0.0 { v } else { 0.0 })
}

/// Gradient of ReLU given the pre-activation input.
pub fn relu_backward(pre: &Tensor, d_out: &Tensor) -> Result<Tensor> {
    pre.zip_map(d_out, |x, g| if x > 0.0 { g } else { 0.0 })
}

/// 2×2 max pooling with stride 2 over an `H×W×C` map; odd trailing rows and
/// columns are dropped. Returns the pooled map and the flat input index of
/// each winner.
pub fn max_pool2(input: &Tensor) -> Result<(Tensor, Vec<usize>)> {
    let (h, w, c) = image_dims(input)?;
    let (oh_n, ow_n) = (h / 2, w / 2);
    if oh_n == 0 || ow_n == 0 {
        return Err(RkrError::Geometry(format!(
            "2×2 pooling needs at least 2×2 input, got {:?}",
            input.shape()
        )));
    }
    let x = input.data();
    let mut out = Vec::with_capacity(oh_n * ow_n * c);
    let mut arg = Vec::with_capacity(oh_n * ow_n * c);
    for oh in 0..oh_n {
        for ow in 0..ow_n {
            for ch in 0..c {
                let mut best = (oh * 2 * w + ow * 2) * c + ch;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = ((oh * 2 + dy) * w + ow * 2 + dx) * c + ch;
                    if x[idx] > x[best] {
                        best = idx;
                    }
                }
                out.push(x[best]);
                arg.push(best);
            }
        }
    }
    Ok((Tensor::new(&[oh_n, ow_n, c], out)?, arg))
}

pub fn max_pool2_backward(input_shape: &[usize], argmax: &[usize], d_out: &Tensor) -> Result<Tensor> {
    let mut dx = Tensor::zeros(input_shape);
    let d = dx.data_mut();
    for (&i, &g) in argmax.iter().zip(d_out.data()) {
        d[i] += g;
    }
    Ok(dx)
}

/// Sum of absolute differences.
pub fn l1(a: &Tensor, b: &Tensor) -> Result<Scalar> {
    a.same_shape(b)?;
    Ok(a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).sum())
}

/// Gradient of [`l1`] with respect to `a` (subgradient 0 at ties).
pub fn l1_backward(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    a.zip_map(b, |x, y| {
        if x > y {
            1.0
        } else if x < y {
            -1.0
        } else {
            0.0
        }
    })
}

/// Index of the largest element; ties resolve to the lowest index.
pub fn argmax(row: &[Scalar]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_matmul(a: &[Vec<Scalar>], b: &[Vec<Scalar>]) -> Vec<Vec<Scalar>> {
        let (m, k, n) = (a.len(), b.len(), b[0].len());
        let mut c = vec![vec![0.0; n]; m];
        for i in 0..m {
            for j in 0..n {
                for p in 0..k {
                    c[i][j] += a[i][p] * b[p][j];
                }
            }
        }
        c
    }

    #[test]
    fn matmul_identity() {
        let i2 = Tensor::from_rows(&[&[1.0, 0.0], &[0.0, 1.0]]);
        let b = Tensor::from_rows(&[&[5.0, 6.0], &[7.0, 8.0]]);
        assert_eq!(matmul(&i2, &b).unwrap(), b);
    }

    #[test]
    fn matmul_matches_triple_loop() {
        let expect = naive_matmul(&[vec![1.0, 2.0], vec![3.0, 4.0]], &[vec![5.0], vec![6.0]]);
        assert_eq!(expect, vec![vec![17.0], vec![39.0]]);
        let a = Tensor::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]);
        let b = Tensor::from_rows(&[&[5.0], &[6.0]]);
        assert_eq!(matmul(&a, &b).unwrap().data(), &[17.0, 39.0]);
    }

    #[test]
    fn matmul_zero_annihilates() {
        let z = Tensor::zeros(&[2, 2]);
        let b = Tensor::from_rows(&[&[1.0, -2.0, 3.0], &[4.0, 5.0, 6.0]]);
        assert!(matmul(&z, &b).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let err = matmul(&Tensor::zeros(&[2, 3]), &Tensor::zeros(&[2, 3])).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3] @ [2, 3]"), "{msg}");
    }

    #[test]
    fn transposed_products_agree_with_plain() {
        let a = Tensor::from_rows(&[&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]]);
        let b = Tensor::from_rows(&[&[1.0, 0.5], &[-1.0, 2.0]]);
        let at = Tensor::from_rows(&[&[1.0, 4.0], &[2.0, 5.0], &[3.0, 6.0]]);
        assert_eq!(matmul_tn(&a, &b).unwrap(), matmul(&at, &b).unwrap());
        let bt = Tensor::from_rows(&[&[1.0, -1.0], &[0.5, 2.0]]);
        assert_eq!(matmul_nt(&at, &bt).unwrap(), matmul(&at, &b).unwrap());
    }

    #[test]
    fn conv_scalar_case() {
        let x = Tensor::new(&[1, 1, 1], vec![2.0]).unwrap();
        let k = Tensor::new(&[1, 1, 1, 1], vec![3.0]).unwrap();
        let y = conv2d(&x, &k, ConvGeometry::new(1, 0).unwrap()).unwrap();
        assert_eq!(y.data(), &[6.0]);
    }

    #[test]
    fn conv_sliding_window_sum() {
        // Oracle: Σ x[i][j]·k[i][j] over the single window = 1·1 + 4·1.
        let x = Tensor::new(&[2, 2, 1], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let k = Tensor::new(&[2, 2, 1, 1], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let y = conv2d(&x, &k, ConvGeometry::new(1, 0).unwrap()).unwrap();
        assert_eq!(y.shape(), &[1, 1, 1]);
        assert_eq!(y.data(), &[5.0]);
    }

    #[test]
    fn conv_zero_kernel() {
        let x = Tensor::new(&[3, 3, 2], (0..18).map(|v| v as Scalar).collect()).unwrap();
        let k = Tensor::zeros(&[2, 2, 2, 3]);
        let y = conv2d(&x, &k, ConvGeometry::new(1, 1).unwrap()).unwrap();
        assert_eq!(y.shape(), &[4, 4, 3]);
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn conv_geometry_error() {
        let x = Tensor::zeros(&[2, 2, 1]);
        let k = Tensor::zeros(&[3, 3, 1, 1]);
        let err = conv2d(&x, &k, ConvGeometry::new(1, 0).unwrap()).unwrap_err();
        assert!(matches!(err, RkrError::Geometry(_)));
    }

    #[test]
    fn conv_kernel_axes_are_width_then_height() {
        // A 2-wide, 1-tall kernel must slide along the width axis.
        let x = Tensor::new(&[1, 3, 1], vec![1.0, 2.0, 3.0]).unwrap();
        let k = Tensor::new(&[2, 1, 1, 1], vec![10.0, 1.0]).unwrap();
        let y = conv2d(&x, &k, ConvGeometry::new(1, 0).unwrap()).unwrap();
        assert_eq!(y.shape(), &[1, 2, 1]);
        assert_eq!(y.data(), &[12.0, 23.0]);
    }

    #[test]
    fn conv_stride_and_padding_extents() {
        let g = ConvGeometry::new(2, 1).unwrap();
        assert_eq!(g.out_extent(5, 3).unwrap(), 3);
        assert_eq!(g.out_extent(4, 3).unwrap(), 2);
    }

    #[test]
    fn affine_examples() {
        let eye = Tensor::from_rows(&[&[1.0, 0.0], &[0.0, 1.0]]);
        let y = affine(&Tensor::vector(&[1.0, 0.0]), &eye, &Tensor::vector(&[0.0, 0.0])).unwrap();
        assert_eq!(y.data(), &[1.0, 0.0]);

        // [1,2]·[[1,1],[0,1]] = [1, 3]; + [1,-1] = [2, 2].
        let w = Tensor::from_rows(&[&[1.0, 1.0], &[0.0, 1.0]]);
        let y = affine(&Tensor::vector(&[1.0, 2.0]), &w, &Tensor::vector(&[1.0, -1.0])).unwrap();
        assert_eq!(y.data(), &[2.0, 2.0]);

        let b = Tensor::vector(&[0.25, -3.0]);
        let y = affine(&Tensor::vector(&[0.0, 0.0]), &w, &b).unwrap();
        assert_eq!(y, b);
    }

    #[test]
    fn affine_batched_matches_rows() {
        let w = Tensor::from_rows(&[&[1.0, 2.0, 0.0], &[0.5, -1.0, 3.0]]);
        let b = Tensor::vector(&[0.1, 0.2, 0.3]);
        let x = Tensor::from_rows(&[&[1.0, 2.0], &[-1.0, 0.5]]);
        let y = affine(&x, &w, &b).unwrap();
        for i in 0..2 {
            let yi = affine(&Tensor::vector(x.row(i)), &w, &b).unwrap();
            assert_eq!(y.row(i), yi.data());
        }
        assert!(affine(&x, &Tensor::zeros(&[3, 3]), &b).is_err());
    }

    #[test]
    fn cross_entropy_examples() {
        let (l, _) = softmax_cross_entropy(&[0.3; 4], 2).unwrap();
        assert!((l - (4.0 as Scalar).ln()).abs() < 1e-12);

        // softmax([0, ln 3])[0] = 1 / (1 + 3).
        let (l, _) = softmax_cross_entropy(&[0.0, (3.0 as Scalar).ln()], 0).unwrap();
        assert!((l - (4.0 as Scalar).ln()).abs() < 1e-12);

        let (l, g) = softmax_cross_entropy(&[1000.0, 0.0], 0).unwrap();
        assert!(l.is_finite() && l.abs() < 1e-12);
        assert!(g.iter().all(|v| v.is_finite()));

        assert!(matches!(softmax_cross_entropy(&[0.0, 1.0], 2), Err(RkrError::Index(_))));
    }

    #[test]
    fn max_pool_routes_gradient_to_winner() {
        let x = Tensor::new(&[2, 2, 1], vec![1.0, 5.0, 3.0, 2.0]).unwrap();
        let (y, arg) = max_pool2(&x).unwrap();
        assert_eq!(y.data(), &[5.0]);
        let dx = max_pool2_backward(x.shape(), &arg, &Tensor::vector(&[1.5])).unwrap();
        assert_eq!(dx.data(), &[0.0, 1.5, 0.0, 0.0]);
    }
}
