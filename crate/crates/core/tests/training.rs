mod common;

use std::cell::RefCell;

use common::{early_stopping_contract, features, small_config, weights, Scripted};
use peft_core::adapters::{attach, AdapterSpec};
use peft_core::model::HeadKind;
use peft_core::training::{train_with_early_stopping, TrainConfig};
use peft_core::Model;

#[test]
fn injected_plateau_stops_after_epoch_seven_and_restores_epoch_two() {
    let c = early_stopping_contract().unwrap();
    assert!(c.stopped_early);
    assert_eq!(c.epochs_run, 7);
    assert_eq!(c.best_epoch, 2);
    assert!(c.weights_moved_after_best);
    assert_eq!(c.restored_epoch, Some(2));
    assert_eq!(c.restored_metric, Some(0.6));
}

#[test]
fn monotone_curve_runs_to_the_last_epoch() {
    let cfg = small_config(HeadKind::Classification { n_classes: 2 });
    let mut model = Model::<f64>::new(cfg.clone(), 4).unwrap();
    let task = Scripted {
        x: features(12, 6, &cfg),
        labels: (0..6).map(|i| i % 2).collect(),
        curve: (0..6).map(|i| i as f64 / 10.0).collect(),
        seen: RefCell::new(Vec::new()),
    };
    let mut config = TrainConfig::new(1e-3, 3, 6);
    config.patience = 2;
    let out = train_with_early_stopping(&mut model, &task, &config).unwrap();
    assert!(!out.stopped_early);
    assert_eq!(out.best.epoch, 6);
    assert_eq!(weights(&model), task.seen.borrow()[5]);
}

#[test]
fn same_seed_gives_identical_curve_and_weights() {
    let cfg = small_config(HeadKind::Classification { n_classes: 2 });
    let run = || {
        let mut model = attach(Model::<f64>::new(cfg.clone(), 5).unwrap(), &AdapterSpec::lora(2), 5).unwrap();
        let task = Scripted {
            x: features(13, 8, &cfg),
            labels: (0..8).map(|i| i % 2).collect(),
            curve: vec![0.1, 0.2, 0.3, 0.4],
            seen: RefCell::new(Vec::new()),
        };
        let out = train_with_early_stopping(&mut model, &task, &TrainConfig::new(1e-2, 3, 4)).unwrap();
        let losses: Vec<u64> = out.curve.iter().map(|r| r.train_loss.to_bits()).collect();
        (losses, weights(&model))
    };
    assert_eq!(run(), run());
}
