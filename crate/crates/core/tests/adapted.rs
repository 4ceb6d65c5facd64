mod common;

use common::{mixed_cnn, oracle_forward, randomize};
use rkr_core::adapters::{init_adapter_set, Head, TaskAdapterSet};
use rkr_core::model::{build_reference_net, AdaptedNetwork, BaseNetwork, NetworkSpec, Preset};
use rkr_core::{SeededRng, Tensor};

fn setup(spec: &NetworkSpec, classes: usize, rank: usize, lite: bool, seed: u64) -> (BaseNetwork, TaskAdapterSet) {
    let mut rng = SeededRng::new(seed);
    let mut base = BaseNetwork::init(spec, &mut rng).unwrap();
    base.freeze();
    let targets = spec.adaptable_targets().unwrap();
    let mut set = init_adapter_set(2, &targets, (base.feature_dim(), classes), rank, lite, None, &mut rng).unwrap();
    randomize(&mut set, &mut rng);
    (base, set)
}

fn batch(spec: &NetworkSpec, n: usize, rng: &mut SeededRng) -> Tensor {
    let mut shape = vec![n];
    shape.extend(&spec.input);
    rng.normal_tensor(&shape, 1.0)
}

fn assert_matches_oracle(spec: &NetworkSpec, lite: bool) {
    let (base, set) = setup(spec, 3, 2, lite, 17);
    let mut rng = SeededRng::new(5);
    let x = batch(spec, 6, &mut rng);
    let logits = AdaptedNetwork::new(&base, &set).forward(&x).unwrap();
    let per = x.len() / 6;
    for i in 0..6 {
        let o = oracle_forward(&base, Some(&set), &set.head, &x.data()[i * per..(i + 1) * per]);
        for (j, &want) in o.logits.iter().enumerate() {
            let got = logits.get(&[i, j]) as f64;
            assert!((got - want).abs() <= 1e-10 * want.abs().max(1.0), "example {i} class {j}: {got} vs {want}");
        }
    }
}

#[test]
fn adapted_forward_matches_dense_oracle_cnn() {
    assert_matches_oracle(&mixed_cnn(), false);
    assert_matches_oracle(&mixed_cnn(), true);
}

#[test]
fn adapted_forward_matches_dense_oracle_mlp() {
    let spec = build_reference_net(Preset::TinyMlp, &[10], 5, Some(12)).unwrap();
    assert_matches_oracle(&spec, false);
    assert_matches_oracle(&spec, true);
}

#[test]
fn base_forward_matches_oracle() {
    let spec = build_reference_net(Preset::TinyCnn, &[8, 8, 1], 6, None).unwrap();
    let mut rng = SeededRng::new(3);
    let base = BaseNetwork::init(&spec, &mut rng).unwrap();
    let head = Head::fresh(6, 3, &mut rng);
    let x = batch(&spec, 2, &mut rng);
    let (logits, _) = base.forward(None, &head, &x, None).unwrap();
    let o = oracle_forward(&base, None, &head, &x.data()[..64]);
    for (j, want) in o.logits.iter().enumerate() {
        assert!((logits.get(&[0, j]) as f64 - want).abs() < 1e-10);
    }
}

#[test]
fn materialized_logits_are_identical_and_pay_scaling_only() {
    for lite in [false, true] {
        let (base, mut set) = setup(&mixed_cnn(), 3, 3, lite, 8);
        set.finalize();
        let mut rng = SeededRng::new(2);
        let x = batch(&mixed_cnn(), 5, &mut rng);
        let mut net = AdaptedNetwork::new(&base, &set);
        let (fly, fly_ops) = net.forward_with_ops(&x).unwrap();
        net.materialize().unwrap();
        let (cached, ops) = net.forward_with_ops(&x).unwrap();
        assert!(cached.bit_eq(&fly));
        assert!(fly_ops.rectification > 0 || lite);
        assert_eq!(ops.rectification, 0);
        let per_example = oracle_forward(&base, Some(&set), &set.head, &x.data()[..x.len() / 5]).scaled;
        assert_eq!(ops.scaling, 5 * per_example);
    }
}

#[test]
fn unfinished_sets_cannot_be_materialized() {
    let (base, set) = setup(&mixed_cnn(), 3, 2, false, 1);
    assert!(AdaptedNetwork::new(&base, &set).materialize().is_err());
}

#[test]
fn non_adaptable_layers_get_no_generators() {
    let targets = mixed_cnn().adaptable_targets().unwrap();
    assert_eq!(targets.iter().map(|t| t.layer).collect::<Vec<_>>(), vec![0, 3, 8]);
}
