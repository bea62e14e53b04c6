use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::backbone::{Ablation, ModelConfig};
use crate::data::{synthesize_dataset, Source};
use crate::params::ParamGroup;

fn tiny_model(seed: u64) -> HybridModel {
    HybridModel::new(ModelConfig::tiny(), &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
}

fn tiny_data(n: usize, seed: u64) -> Vec<Sample> {
    synthesize_dataset(n, 16, seed).unwrap()
}

fn settings() -> TrainSettings {
    TrainSettings {
        batch_size: 8,
        seed: 3,
        ..TrainSettings::default()
    }
}

fn fast_optim() -> OptimConfig {
    OptimConfig {
        lr_backbone: 1e-3,
        lr_quantum_and_head: 1e-2,
        ..OptimConfig::default()
    }
}

#[test]
fn zero_learning_rate_leaves_parameters_bitwise() {
    let mut model = tiny_model(1);
    let before = model.params().clone();
    let cfg = OptimConfig {
        lr_backbone: 0.0,
        lr_quantum_and_head: 0.0,
        ..OptimConfig::default()
    };
    let mut opt = AdamW::new(cfg, model.params());
    let stats = train_epoch(&mut model, &mut opt, &tiny_data(8, 0), &settings(), 1, &mut AngleMonitor::default()).unwrap();
    assert!(stats.mean_loss.is_finite() && stats.mean_loss > 0.0);
    assert!(model.params().values_bitwise_eq(&before));
    assert_eq!(opt.steps(), 2);
}

#[test]
fn same_seed_same_trajectory() {
    let data = tiny_data(8, 1);
    let run = || {
        let mut model = tiny_model(2);
        let mut opt = AdamW::new(fast_optim(), model.params());
        let losses: Vec<f64> = (1..=3)
            .map(|e| {
                train_epoch(&mut model, &mut opt, &data, &settings(), e, &mut AngleMonitor::default())
                    .unwrap()
                    .mean_loss
            })
            .collect();
        (losses, model)
    };
    let (a, ma) = run();
    let (b, mb) = run();
    assert_eq!(a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    assert!(ma.params().values_bitwise_eq(mb.params()));
}

#[test]
fn nan_loss_aborts_with_batch_index() {
    let mut model = tiny_model(3);
    model.params_mut().get_mut("head.bias").unwrap().tensor.data_mut()[0] = f64::NAN;
    let mut opt = AdamW::new(fast_optim(), model.params());
    let err = train_epoch(&mut model, &mut opt, &tiny_data(4, 2), &settings(), 1, &mut AngleMonitor::default()).unwrap_err();
    match err {
        Error::Numerical(msg) => assert!(msg.contains("batch 0"), "{msg}"),
        e => panic!("unexpected {e}"),
    }
    assert_eq!(Error::Numerical(String::new()).exit_code(), 3);
}

#[test]
fn evaluation_metrics_are_consistent() {
    let model = tiny_model(4);
    let data = tiny_data(10, 3);
    let ev = evaluate(&model, &data, 0.5, 7).unwrap();
    let c = ev.rates.confusion;
    assert_eq!(c.total(), data.len());
    assert!((ev.rates.accuracy - (c.tp + c.tn) as f64 / data.len() as f64).abs() <= 1e-12);
    let again = evaluate(&model, &data, 0.5, 64).unwrap();
    assert_eq!(ev.rates, again.rates);
    assert!(ev.rates.auc.is_some());
    let negatives: Vec<Sample> = data.iter().filter(|s| s.label == 0).cloned().collect();
    assert_eq!(evaluate(&model, &negatives, 0.5, 8).unwrap().rates.auc, None);
}

#[test]
fn every_parameter_has_exactly_one_group() {
    let model = tiny_model(5);
    let bb = model.params().numel_in(ParamGroup::Backbone);
    let qh = model.params().numel_in(ParamGroup::QuantumAndHead);
    assert_eq!(bb + qh, model.params().numel());
    for p in model.params().iter() {
        let expected = if p.name.starts_with("stem.") || p.name.starts_with("stage") {
            ParamGroup::Backbone
        } else {
            ParamGroup::QuantumAndHead
        };
        assert_eq!(p.group, expected, "{}", p.name);
    }
}

#[test]
fn fit_with_zero_epochs_checkpoints_initial_model() {
    let dir = tempfile::tempdir().unwrap();
    let mut model = tiny_model(6);
    let data = tiny_data(4, 4);
    let cfg = FitConfig {
        epochs: 0,
        optim: fast_optim(),
        settings: settings(),
    };
    let out = fit(&mut model, &data, &data, &cfg, Some(dir.path())).unwrap();
    assert!(out.history.is_empty());
    assert_eq!(out.best_epoch, None);
    let (loaded, _) = HybridModel::load(&dir.path().join(BEST_CHECKPOINT), Some(model.config())).unwrap();
    assert!(loaded.params().values_bitwise_eq(model.params()));
    assert_eq!(fs::read_to_string(dir.path().join(HISTORY_FILE)).unwrap(), format!("{HISTORY_HEADER}\n"));
}

#[test]
fn fit_keeps_best_checkpoint_and_history() {
    let dir = tempfile::tempdir().unwrap();
    let mut model = tiny_model(7);
    let data = tiny_data(16, 5);
    let (train, val) = data.split_at(24);
    let cfg = FitConfig {
        epochs: 3,
        optim: fast_optim(),
        settings: settings(),
    };
    let out = fit(&mut model, train, val, &cfg, Some(dir.path())).unwrap();
    assert_eq!(out.history.len(), 3);
    assert!(out.history.iter().all(|r| r.epoch_seconds > 0.0));
    let best = out.best_epoch.unwrap();
    let best_acc = out.history[best - 1].accuracy;
    assert!(out.history[..best - 1].iter().all(|r| r.accuracy < best_acc));
    assert!(out.history.iter().all(|r| r.accuracy <= best_acc));

    let (loaded, extra) = HybridModel::load(&dir.path().join(BEST_CHECKPOINT), None).unwrap();
    assert_eq!(extra["epoch"], best);
    let ev = evaluate(&loaded, val, 0.5, 64).unwrap();
    assert_eq!(ev.rates.accuracy, best_acc);
    assert_eq!(ev.loss.to_bits(), out.history[best - 1].val_loss.to_bits());
    assert!(loaded.params().values_bitwise_eq(out.best_model.params()));

    let (last, _) = HybridModel::load(&dir.path().join(LAST_CHECKPOINT), None).unwrap();
    assert!(last.params().values_bitwise_eq(model.params()));
    let hist = fs::read_to_string(dir.path().join(HISTORY_FILE)).unwrap();
    assert_eq!(hist.lines().count(), 4);
    assert_eq!(out.angles.violations, 0);
    assert!(out.angles.count > 0);
}

#[test]
fn classical_ablation_trains_without_touching_the_circuit() {
    let mut cfg = ModelConfig::tiny();
    cfg.ablation = Ablation::ClassicalOnly;
    let mut model = HybridModel::new(cfg, &mut ChaCha8Rng::seed_from_u64(8)).unwrap();
    let theta = model.params().get("pqc.theta").unwrap().tensor.clone();
    let proj = model.params().get("projection.weight").unwrap().tensor.clone();
    let data = tiny_data(8, 6);
    let fc = FitConfig {
        epochs: 2,
        optim: fast_optim(),
        settings: settings(),
    };
    let out = fit(&mut model, &data, &data, &fc, None).unwrap();
    assert_eq!(out.history.len(), 2);
    assert!(model.params().get("pqc.theta").unwrap().tensor.bitwise_eq(&theta));
    assert!(model.params().get("projection.weight").unwrap().tensor.bitwise_eq(&proj));
    let d = model.config().backbone.feature_dim;
    assert!(model.params().get("head.weight").unwrap().tensor.data()[d..].iter().all(|&v| v == 0.0));
}

#[test]
fn angle_monitor_flags_boundary() {
    use std::f64::consts::PI;
    let mut m = AngleMonitor::default();
    m.record(&[0.0, PI.next_down(), -PI.next_down()]);
    assert_eq!(m.violations, 0);
    m.record(&[PI, f64::NAN]);
    assert_eq!((m.count, m.violations), (5, 2));
}

#[test]
fn empty_training_set_is_data_error() {
    let mut model = tiny_model(9);
    let mut opt = AdamW::new(fast_optim(), model.params());
    let r = train_epoch(&mut model, &mut opt, &[], &settings(), 1, &mut AngleMonitor::default());
    assert!(matches!(r, Err(Error::Data(_))));
    let s = Sample {
        image: Tensor::zeros(&[1, 8, 8]),
        label: 0,
        patient_id: "x".into(),
        source: Source::Synthetic,
    };
    assert!(evaluate(&model, &[s], 0.5, 0).is_ok());
}
