use nalgebra::DMatrix;
use proptest::prelude::*;
use rkr_core::adapters::{adapt_weights, RectificationGenerator, TargetShape};
use rkr_core::gzsl::{
    cross_alignment_loss, kl_divergence, per_class_accuracy, wasserstein_rows, AnnealSchedule, LatentGaussian,
};
use rkr_core::harness::{Checkpoint, DatasetFile};
use rkr_core::train::Split;
use rkr_core::{Param, Scalar, SeededRng, Tensor};

fn target() -> impl Strategy<Value = TargetShape> {
    prop_oneof![
        (1usize..4, 1usize..4, 1usize..5, 1usize..6).prop_map(|(wf, hf, cin, cout)| TargetShape::Conv { wf, hf, cin, cout }),
        (1usize..12, 1usize..12).prop_map(|(hin, hout)| TargetShape::Fc { hin, hout }),
    ]
}

fn numeric_rank(m: &Tensor) -> usize {
    let (r, c) = (m.shape()[0], m.shape()[1]);
    let mat = DMatrix::from_row_slice(r, c, &m.data().iter().map(|&v| v as f64).collect::<Vec<_>>());
    let sv = mat.singular_values();
    let max = sv.iter().copied().fold(0.0, f64::max);
    sv.iter().filter(|&&s| s > 1e-9 * max).count()
}

fn gaussian(rows: usize, d: usize, rng: &mut SeededRng) -> LatentGaussian {
    LatentGaussian::new(rng.normal_tensor(&[rows, d], 1.0), rng.normal_tensor(&[rows, d], 1.0)).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn rectification_rank_is_bounded(t in target(), k in 1usize..5, seed in any::<u64>()) {
        let mut rng = SeededRng::new(seed);
        let (rows, cols) = t.factor_dims();
        let g = RectificationGenerator::from_factors(t, rng.normal_tensor(&[rows, k], 1.0), rng.normal_tensor(&[k, cols], 1.0)).unwrap();
        let m = g.generate_matrix().unwrap();
        prop_assert!(numeric_rank(&m) <= k);
        let shaped = g.generate().unwrap();
        prop_assert_eq!(shaped.shape().to_vec(), t.weight_shape());
    }

    #[test]
    fn adding_and_removing_a_rectification_recovers_the_base(n in 1usize..40, seed in any::<u64>()) {
        let mut rng = SeededRng::new(seed);
        let base = Param::new(rng.normal_tensor(&[n], 1.0));
        let r = rng.normal_tensor(&[n], 1.0);
        let there = adapt_weights(&base, &r).unwrap();
        let back = adapt_weights(&Param::new(there), &r.scale(-1.0)).unwrap();
        // One rounding in each direction, relative to the larger operand.
        for ((a, b), d) in back.data().iter().zip(base.value.data()).zip(r.data()) {
            prop_assert!((a - b).abs() <= b.abs().max(d.abs()) * Scalar::EPSILON);
        }
    }

    #[test]
    fn dataset_files_round_trip(count in 1usize..12, dims in prop::collection::vec(1usize..4, 1..4), classes in 2usize..5, seed in any::<u64>(), with_table in any::<bool>()) {
        let mut rng = SeededRng::new(seed);
        let mut shape = vec![count];
        shape.extend(&dims);
        let inputs = rng.normal_tensor(&shape, 3.0).map(|v| v as f32 as Scalar);
        let ids: Vec<usize> = (0..classes).map(|c| 10 + 3 * c).collect();
        let labels: Vec<usize> = (0..count).map(|_| ids[rng.below(classes)]).collect();
        let mut file = DatasetFile::new(7, "train", &Split::new(inputs, labels).unwrap(), &ids).unwrap();
        if with_table {
            let table = rng.normal_tensor(&[classes, 3], 1.0).map(|v| v as f32 as Scalar);
            file = file.with_embeddings(table, 1).unwrap();
        }
        let bytes = file.to_bytes().unwrap();
        let back = DatasetFile::from_bytes(&bytes).unwrap();
        prop_assert!(back.inputs.bit_eq(&file.inputs));
        prop_assert_eq!(&back, &file);
        prop_assert_eq!(back.to_bytes().unwrap(), bytes);
    }

    #[test]
    fn checkpoints_round_trip(shapes in prop::collection::vec(prop::collection::vec(1usize..4, 1..3), 1..4), seed in any::<u64>()) {
        let mut rng = SeededRng::new(seed);
        let named: Vec<(String, Tensor)> = shapes.iter().enumerate().map(|(i, s)| (format!("t{i}"), rng.normal_tensor(s, 1.0))).collect();
        let ck = Checkpoint::new("probe", named.clone());
        let back = Checkpoint::from_bytes(&ck.to_bytes().unwrap()).unwrap();
        for (name, t) in &named {
            prop_assert!(back.get(name).unwrap().bit_eq(t));
        }
    }

    #[test]
    fn wasserstein_is_a_metric(rows in 1usize..5, d in 1usize..6, seed in any::<u64>()) {
        let mut rng = SeededRng::new(seed);
        let (a, b, c) = (gaussian(rows, d, &mut rng), gaussian(rows, d, &mut rng), gaussian(rows, d, &mut rng));
        let ab = wasserstein_rows(&a, &b).unwrap();
        let ba = wasserstein_rows(&b, &a).unwrap();
        let bc = wasserstein_rows(&b, &c).unwrap();
        let ac = wasserstein_rows(&a, &c).unwrap();
        for i in 0..rows {
            prop_assert!(ab[i] >= 0.0);
            prop_assert_eq!(ab[i], ba[i]);
            prop_assert!(ac[i] <= ab[i] + bc[i] + 1e-12);
        }
        prop_assert!(wasserstein_rows(&a, &a).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn kl_is_non_negative(rows in 1usize..5, d in 1usize..6, seed in any::<u64>()) {
        let g = gaussian(rows, d, &mut SeededRng::new(seed));
        prop_assert!(kl_divergence(&g) >= 0.0);
    }

    #[test]
    fn anneal_schedules_rise_then_hold(start in 0usize..30, len in 0usize..40, rate in 0.0f64..2.0) {
        let s = AnnealSchedule { start_epoch: start, end_epoch: start + len, rate };
        let values: Vec<f64> = (0..start + len + 10).map(|e| s.value(e)).collect();
        prop_assert!(values.windows(2).all(|w| w[0] <= w[1]));
        prop_assert!(values[..=start].iter().all(|&v| v == 0.0));
        prop_assert!(values[start + len..].iter().all(|&v| v == rate * len as f64));
    }

    #[test]
    fn per_class_accuracy_ignores_duplicated_examples(truth in prop::collection::vec(0usize..4, 1..30), seed in any::<u64>(), dup in 1usize..4) {
        let mut rng = SeededRng::new(seed);
        let pred: Vec<usize> = truth.iter().map(|&t| if rng.below(2) == 0 { t } else { rng.below(4) }).collect();
        let classes = [0, 1, 2, 3];
        let once = per_class_accuracy(&pred, &truth, &classes);
        let rep = |v: &[usize]| v.iter().flat_map(|&x| std::iter::repeat(x).take(dup)).collect::<Vec<_>>();
        let many = per_class_accuracy(&rep(&pred), &rep(&truth), &classes);
        prop_assert_eq!(once.map(|v| (v * 1e9).round()), many.map(|v| (v * 1e9).round()));
    }

    #[test]
    fn cross_alignment_is_symmetric(rows in 1usize..5, dv in 1usize..6, da in 1usize..6, seed in any::<u64>()) {
        let mut rng = SeededRng::new(seed);
        let (x, dvza) = (rng.normal_tensor(&[rows, dv], 1.0), rng.normal_tensor(&[rows, dv], 1.0));
        let (c, dazv) = (rng.normal_tensor(&[rows, da], 1.0), rng.normal_tensor(&[rows, da], 1.0));
        let forward = cross_alignment_loss(&dazv, &c, &dvza, &x).unwrap();
        let swapped = cross_alignment_loss(&dvza, &x, &dazv, &c).unwrap();
        prop_assert_eq!(forward, swapped);
    }
}

#[cfg(not(feature = "f32"))]
mod gradients {
    use super::*;
    use rkr_core::gradcheck::grad_check;
    use rkr_core::ops::{affine, affine_backward, conv2d, conv2d_backward, matmul, matmul_backward, ConvGeometry};

    const H: f64 = 1e-5;
    const TOL: f64 = 1e-4;

    /// `Σ out ⊙ w` for a fixed random `w`, so the check covers the full Jacobian-vector product.
    fn dot(t: &Tensor, w: &Tensor) -> Scalar {
        t.data().iter().zip(w.data()).map(|(a, b)| a * b).sum()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn matmul_gradients(m in 1usize..5, k in 1usize..5, n in 1usize..5, seed in any::<u64>()) {
            let mut rng = SeededRng::new(seed);
            let (a, b, w) = (rng.normal_tensor(&[m, k], 1.0), rng.normal_tensor(&[k, n], 1.0), rng.normal_tensor(&[m, n], 1.0));
            let (da, db) = matmul_backward(&a, &b, &w).unwrap();
            let ra = grad_check("a", |x| Ok(dot(&matmul(&Tensor::new(&[m, k], x.to_vec())?, &b)?, &w)), a.data(), da.data(), H, TOL).unwrap();
            let rb = grad_check("b", |x| Ok(dot(&matmul(&a, &Tensor::new(&[k, n], x.to_vec())?)?, &w)), b.data(), db.data(), H, TOL).unwrap();
            prop_assert!(ra.passed && rb.passed);
        }

        #[test]
        fn affine_gradients(batch in 1usize..4, i in 1usize..5, o in 1usize..5, seed in any::<u64>()) {
            let mut rng = SeededRng::new(seed);
            let (x, wt, bias) = (rng.normal_tensor(&[batch, i], 1.0), rng.normal_tensor(&[i, o], 1.0), rng.normal_tensor(&[o], 1.0));
            let w = rng.normal_tensor(&[batch, o], 1.0);
            let (dx, dw, db) = affine_backward(&x, &wt, &w).unwrap();
            let f = |x: &Tensor, wt: &Tensor, b: &Tensor| Ok(dot(&affine(x, wt, b)?, &w));
            prop_assert!(grad_check("x", |v| f(&Tensor::new(&[batch, i], v.to_vec())?, &wt, &bias), x.data(), dx.data(), H, TOL).unwrap().passed);
            prop_assert!(grad_check("w", |v| f(&x, &Tensor::new(&[i, o], v.to_vec())?, &bias), wt.data(), dw.data(), H, TOL).unwrap().passed);
            prop_assert!(grad_check("b", |v| f(&x, &wt, &Tensor::new(&[o], v.to_vec())?), bias.data(), db.data(), H, TOL).unwrap().passed);
        }

        #[test]
        fn conv_gradients(h in 2usize..6, w in 2usize..6, ci in 1usize..3, co in 1usize..3, k in 1usize..3, stride in 1usize..3, pad in 0usize..2, seed in any::<u64>()) {
            let geom = ConvGeometry::new(stride, pad).unwrap();
            let mut rng = SeededRng::new(seed);
            let x = rng.normal_tensor(&[h, w, ci], 1.0);
            let kernel = rng.normal_tensor(&[k, k, ci, co], 1.0);
            let out = conv2d(&x, &kernel, geom).unwrap();
            let up = rng.normal_tensor(out.shape(), 1.0);
            let (dx, dk) = conv2d_backward(&x, &kernel, geom, &up).unwrap();
            let rx = grad_check("x", |v| Ok(dot(&conv2d(&Tensor::new(&[h, w, ci], v.to_vec())?, &kernel, geom)?, &up)), x.data(), dx.data(), H, TOL).unwrap();
            let rk = grad_check("k", |v| Ok(dot(&conv2d(&x, &Tensor::new(&[k, k, ci, co], v.to_vec())?, geom)?, &up)), kernel.data(), dk.data(), H, TOL).unwrap();
            prop_assert!(rx.passed && rk.passed);
        }
    }
}
