mod common;

use common::{continual_data, continual_net, sequence};
use rkr_core::adapters::{audit, Head};
use rkr_core::harness::{generate_synthetic_tasks, SynthSpec};
use rkr_core::model::{build_reference_net, BaseNetwork, LayerParams, NetworkSpec, Preset};
use rkr_core::train::{
    evaluate_split, evaluate_task, run_sequence, train_adapter_task, train_base_task, Split, TaskDataset, TrainConfig,
    Variant,
};
use rkr_core::{Param, RkrError, SeededRng, Tensor};

fn toy() -> Vec<TaskDataset> {
    let spec = SynthSpec {
        tasks: 2,
        classes_per_task: 2,
        input_shape: vec![8],
        separation: 10.0,
        conflict_mode: false,
        nuisance: 0.0,
        train_per_class: 60,
        test_per_class: 30,
        seed: 3,
    };
    generate_synthetic_tasks(&spec).unwrap()
}

fn toy_net() -> NetworkSpec {
    build_reference_net(Preset::TinyMlp, &[8], 8, None).unwrap()
}

fn quick() -> TrainConfig {
    TrainConfig { epochs: 10, milestones: vec![], ..TrainConfig::default() }
}

#[test]
fn separable_toy_is_learned() {
    let data = toy();
    let (base, head, log) = train_base_task(&toy_net(), &data[0], &quick(), &mut SeededRng::new(1)).unwrap();
    let acc = evaluate_split(&base, None, &head, &data[0], &data[0].train).unwrap();
    assert!(acc >= 99.0, "train accuracy {acc}");
    assert!(log.final_loss.is_finite() && log.final_loss <= log.initial_loss);
    assert!(log.epoch_losses.iter().all(|l| l.is_finite()));
}

#[test]
fn same_seed_gives_identical_weights() {
    let data = toy();
    let a = train_base_task(&toy_net(), &data[0], &quick(), &mut SeededRng::new(9)).unwrap();
    let b = train_base_task(&toy_net(), &data[0], &quick(), &mut SeededRng::new(9)).unwrap();
    assert_eq!(a.0.checksum(), b.0.checksum());
    assert_eq!(a.1.checksum(), b.1.checksum());
    let c = train_base_task(&toy_net(), &data[0], &quick(), &mut SeededRng::new(10)).unwrap();
    assert_ne!(a.0.checksum(), c.0.checksum());
}

#[test]
fn adapter_training_keeps_base_and_previous_sets_intact() {
    let data = toy();
    let (base, _, _) = train_base_task(&toy_net(), &data[0], &quick(), &mut SeededRng::new(1)).unwrap();
    let before = base.checksum();
    let (first, log) = train_adapter_task(&base, &data[1], &quick(), None, &mut SeededRng::new(2)).unwrap();
    assert_eq!(log.base_grad_norm_sq, 0.0);
    let snapshot = first.checksum();
    let mut later = data[1].clone();
    later.task_id = 3;
    let (second, _) = train_adapter_task(&base, &later, &quick(), Some(&first), &mut SeededRng::new(3)).unwrap();
    assert_eq!(base.checksum(), before);
    assert_eq!(first.checksum(), snapshot);
    assert_ne!(second.generator_checksum(), first.generator_checksum());
}

#[test]
fn adapter_training_requires_frozen_base() {
    let data = toy();
    let base = BaseNetwork::init(&toy_net(), &mut SeededRng::new(0)).unwrap();
    let err = train_adapter_task(&base, &data[1], &quick(), None, &mut SeededRng::new(0)).unwrap_err();
    assert!(matches!(err, RkrError::Invariant(_)));
}

/// One hidden unit per class, copying the input: argmax is always right.
#[test]
fn perfect_classifier_scores_100() {
    let spec = build_reference_net(Preset::TinyMlp, &[2], 2, Some(2)).unwrap();
    let eye = Tensor::from_rows(&[&[1.0, 0.0], &[0.0, 1.0]]);
    let layer = || Some(LayerParams { weight: Param::new(eye.clone()), bias: Param::new(Tensor::zeros(&[2])) });
    let base = BaseNetwork::from_params(&spec, vec![layer(), None, layer(), None]).unwrap();
    let head = Head { weight: Param::new(eye.clone()), bias: Param::new(Tensor::zeros(&[2])) };
    let x = Tensor::from_rows(&[&[1.0, 0.0], &[0.0, 2.0], &[3.0, 1.0], &[0.5, 0.9]]);
    let split = Split::new(x, vec![10, 11, 10, 11]).unwrap();
    let data = TaskDataset::new(1, split.clone(), split).unwrap();
    assert_eq!(evaluate_task(&base, None, &head, &data).unwrap(), 100.0);
}

/// Labels independent of the inputs: accuracy is Binomial(n, 1/C)/n.
#[test]
fn random_logits_score_chance() {
    let (n, c) = (4000usize, 4usize);
    let mut rng = SeededRng::new(21);
    let spec = build_reference_net(Preset::TinyMlp, &[6], 5, None).unwrap();
    let base = BaseNetwork::init(&spec, &mut rng).unwrap();
    let head = Head::fresh(5, c, &mut rng);
    let x = rng.normal_tensor(&[n, 6], 1.0);
    let labels: Vec<usize> = (0..n).map(|i| i % c).collect();
    let split = Split::new(x, labels).unwrap();
    let data = TaskDataset::new(1, split.clone(), split).unwrap();
    let acc = evaluate_task(&base, None, &head, &data).unwrap();
    let sd = 100.0 * ((1.0 / c as f64) * (1.0 - 1.0 / c as f64) / n as f64).sqrt();
    assert!((acc - 100.0 / c as f64).abs() < 4.0 * sd, "accuracy {acc}");
    assert_eq!(evaluate_task(&base, None, &head, &data).unwrap(), acc);
}

#[test]
fn empty_test_split_is_an_evaluation_error() {
    let data = toy();
    let (base, head, _) = train_base_task(&toy_net(), &data[0], &quick(), &mut SeededRng::new(1)).unwrap();
    let empty = data[0].test.head(0);
    assert!(matches!(evaluate_split(&base, None, &head, &data[0], &empty), Err(RkrError::Evaluation(_))));
}

#[test]
fn single_task_run_passes_audit_vacuously() {
    let data = toy();
    let opts = rkr_core::train::SequenceOptions {
        variant: Variant::Rkr,
        forward_transfer: true,
        train: vec![quick()],
        seed: 4,
    };
    let run = run_sequence(&toy_net(), &data[..1], &opts).unwrap();
    assert_eq!(run.report.tasks.len(), 1);
    assert_eq!(run.report.max_drift, 0.0);
}

#[test]
fn rkr_keeps_accuracy_and_baseline_drifts() {
    let data = generate_synthetic_tasks(&continual_data(2)).unwrap();
    let rkr = run_sequence(&continual_net(), &data, &sequence(Variant::Rkr, 2, true)).unwrap();
    for t in &rkr.report.tasks {
        assert_eq!(t.acc_after, t.acc_during);
        assert_eq!(t.drift, 0.0);
    }
    let baseline = run_sequence(&continual_net(), &data, &sequence(Variant::FinetuneBaseline, 2, true)).unwrap();
    assert!(baseline.report.tasks[..4].iter().any(|t| t.drift > 0.0));
    assert!(baseline.report.tasks.iter().all(|t| t.adapter_params == 0));
}

#[test]
fn lite_uses_fewer_parameters_on_tiny_cnn() {
    let inv = build_reference_net(Preset::TinyCnn, &[16, 16, 1], 32, None).unwrap().inventory().unwrap();
    assert!(audit(&inv, 2, true).adapter_total < audit(&inv, 2, false).adapter_total);
}

#[test]
fn overlapping_class_sets_are_rejected() {
    let mut data = toy();
    data[1] = data[0].clone();
    data[1].task_id = 2;
    let opts = rkr_core::train::SequenceOptions { variant: Variant::Rkr, forward_transfer: true, train: vec![quick()], seed: 0 };
    assert!(run_sequence(&toy_net(), &data, &opts).is_err());
}
