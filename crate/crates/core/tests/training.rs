//! Training-loop behaviour: early stopping, determinism, best-weight
//! restoration, divergence handling, the degenerate grid, and end-to-end
//! learning sanity on generated scenes.

mod common;

use modeseg::checkpoint::fingerprint_state;
use modeseg::data::{stratified_split, synth_scene, tile, SynthConfig};
use modeseg::error::Error;
use modeseg::experiments::{self, GridAxes};
use modeseg::models::{Arch, Model, ModelSpec};
use modeseg::norm::{NormConfig, NormKind};
use modeseg::objectives::{dice_loss, LossConfig, LossKind};
use modeseg::optim::{Optimizer, OptimizerConfig, OptimizerKind};
use modeseg::tensor::Tensor;
use modeseg::trainer::{self, TrainConfig};
use rand::Rng;

fn small_spec(kind: NormKind) -> ModelSpec {
    ModelSpec {
        arch: Arch::Unet,
        depth: 2,
        base_channels: 6,
        norm: NormConfig {
            kind,
            ..NormConfig::default()
        },
        ..ModelSpec::default()
    }
}

fn dataset(seed: u64) -> Vec<modeseg::data::Tile> {
    let cfg = SynthConfig::default();
    let (raster, mask) = synth_scene(256, 256, &cfg, seed).unwrap();
    let mut tiles = tile(&raster, &mask, 32).unwrap();
    let all: Vec<usize> = (0..tiles.len()).collect();
    modeseg::data::standardize(&mut tiles, &all).unwrap();
    tiles
}

#[test]
fn early_stop_fires_after_patience_epochs_without_improvement() {
    // A vanishing learning rate and no norm running-statistics freeze the
    // validation loss: the first epoch sets the best, the second brings no
    // improvement, and patience 1 stops the run at epoch 2.
    let tiles = dataset(31);
    let train: Vec<usize> = (0..48).collect();
    let val: Vec<usize> = (48..64).collect();
    let cfg = TrainConfig {
        patience: 1,
        max_epochs: 10,
        seed: 4,
        ..TrainConfig::default()
    };
    let opt = OptimizerConfig {
        kind: OptimizerKind::Sgd,
        learning_rate: 1e-30,
        ..OptimizerConfig::default()
    };
    let mut model = Model::<f32>::build(&small_spec(NormKind::None), 1).unwrap();
    let record = trainer::train(
        &mut model,
        &tiles,
        &train,
        &val,
        &cfg,
        &opt,
        &LossConfig::default(),
    )
    .unwrap();
    assert_eq!(record.stopped_epoch, 2);
    assert_eq!(record.best_epoch, 1);
}

#[test]
fn stop_gap_never_exceeds_patience() {
    let tiles = dataset(32);
    let train: Vec<usize> = (0..48).collect();
    let val: Vec<usize> = (48..64).collect();
    let cfg = TrainConfig {
        patience: 3,
        max_epochs: 12,
        seed: 7,
        ..TrainConfig::default()
    };
    let opt = OptimizerConfig {
        learning_rate: 1e-3,
        ..OptimizerConfig::default()
    };
    let mut model = Model::<f32>::build(&small_spec(NormKind::Batch), 2).unwrap();
    let record = trainer::train(
        &mut model,
        &tiles,
        &train,
        &val,
        &cfg,
        &opt,
        &LossConfig::default(),
    )
    .unwrap();
    assert!(record.stopped_epoch - record.best_epoch <= cfg.patience);
    assert!(record.stopped_epoch <= cfg.max_epochs);
    // cumulative time is monotone
    let mut acc = 0.0;
    for e in &record.epochs {
        assert!(e.seconds >= 0.0);
        acc += e.seconds;
    }
    assert!(acc <= record.total_seconds + 1.0);
}

#[test]
fn fixed_seed_reproduces_the_run_exactly() {
    let tiles = dataset(33);
    let train: Vec<usize> = (0..40).collect();
    let val: Vec<usize> = (40..56).collect();
    let cfg = TrainConfig {
        max_epochs: 3,
        seed: 11,
        ..TrainConfig::default()
    };
    let opt = OptimizerConfig::default();
    let loss = LossConfig::default();
    let run = || {
        let mut model = Model::<f32>::build(&small_spec(NormKind::Mode), 5).unwrap();
        let record =
            trainer::train(&mut model, &tiles, &train, &val, &cfg, &opt, &loss).unwrap();
        (record, fingerprint_state(&mut model))
    };
    let (a, fa) = run();
    let (b, fb) = run();
    assert_eq!(fa, fb, "identical final weights");
    assert_eq!(a.epochs.len(), b.epochs.len());
    for (ea, eb) in a.epochs.iter().zip(&b.epochs) {
        assert_eq!(ea.train_loss.to_bits(), eb.train_loss.to_bits());
        assert_eq!(ea.val_loss.to_bits(), eb.val_loss.to_bits());
    }
}

#[test]
fn restore_best_returns_best_epoch_weights() {
    let tiles = dataset(34);
    let train: Vec<usize> = (0..48).collect();
    let val: Vec<usize> = (48..64).collect();
    let cfg = TrainConfig {
        max_epochs: 8,
        patience: 8,
        seed: 3,
        restore_best: true,
        ..TrainConfig::default()
    };
    // aggressive rate so the validation loss is non-monotone
    let opt = OptimizerConfig {
        learning_rate: 5e-3,
        ..OptimizerConfig::default()
    };
    let loss = LossConfig::default();
    let mut model = Model::<f32>::build(&small_spec(NormKind::Batch), 9).unwrap();
    let record = trainer::train(&mut model, &tiles, &train, &val, &cfg, &opt, &loss).unwrap();
    // re-scoring the restored weights reproduces the recorded best loss
    let (val_loss, _) = trainer::evaluate(&model, &tiles, &val, &loss, cfg.batch_size).unwrap();
    assert_eq!(
        val_loss.to_bits(),
        record.best_val_loss.to_bits(),
        "restored weights score exactly the best recorded validation loss"
    );
}

#[test]
fn divergence_aborts_with_partial_record() {
    let tiles = dataset(35);
    let train: Vec<usize> = (0..32).collect();
    let val: Vec<usize> = (32..48).collect();
    let cfg = TrainConfig {
        max_epochs: 5,
        seed: 2,
        ..TrainConfig::default()
    };
    let opt = OptimizerConfig {
        kind: OptimizerKind::Sgd,
        learning_rate: 1e12,
        ..OptimizerConfig::default()
    };
    let mut model = Model::<f32>::build(&small_spec(NormKind::Batch), 4).unwrap();
    let err = trainer::train(
        &mut model,
        &tiles,
        &train,
        &val,
        &cfg,
        &opt,
        &LossConfig::default(),
    )
    .unwrap_err();
    match err {
        Error::Diverged { epoch, record } => {
            assert!(epoch >= 1);
            assert_eq!(record.stopped_epoch, epoch);
        }
        other => panic!("expected divergence, got {other}"),
    }
}

#[test]
fn degenerate_grid_is_a_single_training_run() {
    let tiles = dataset(36);
    let plan = stratified_split(&tiles, (0.7, 0.1, 0.2), 1).unwrap();
    let axes = GridAxes {
        optimizers: vec![OptimizerKind::Adam],
        learning_rates: vec![1e-3],
        dropouts: vec![0.0],
        losses: vec![LossKind::Dice],
    };
    let cfg = TrainConfig {
        max_epochs: 2,
        seed: 8,
        ..TrainConfig::default()
    };
    let spec = small_spec(NormKind::Batch);
    let result =
        experiments::grid_search_with::<f32>(&axes, &spec, &tiles, &plan, &cfg, 1).unwrap();
    assert_eq!(result.runs.len(), 1);
    assert_eq!(result.selected, Some(0));

    // identical to calling the trainer directly
    let mut model = Model::<f32>::build(&spec, cfg.seed).unwrap();
    let direct = trainer::train(
        &mut model,
        &tiles,
        &plan.train,
        &plan.val,
        &cfg,
        &OptimizerConfig {
            kind: OptimizerKind::Adam,
            learning_rate: 1e-3,
            ..OptimizerConfig::default()
        },
        &LossConfig::default(),
    )
    .unwrap();
    let grid_record = result.runs[0].record.as_ref().unwrap();
    assert_eq!(grid_record.best_val_dsc().to_bits(), direct.best_val_dsc().to_bits());
}

#[test]
fn grid_csv_shape_and_selection_flag() {
    let tiles = dataset(37);
    let plan = stratified_split(&tiles, (0.7, 0.1, 0.2), 1).unwrap();
    let axes = GridAxes {
        optimizers: vec![OptimizerKind::Adam, OptimizerKind::Sgd],
        learning_rates: vec![1e-3],
        dropouts: vec![0.0],
        losses: vec![LossKind::Dice],
    };
    let cfg = TrainConfig {
        max_epochs: 1,
        seed: 8,
        ..TrainConfig::default()
    };
    let result = experiments::grid_search_with::<f32>(
        &axes,
        &small_spec(NormKind::Batch),
        &tiles,
        &plan,
        &cfg,
        2,
    )
    .unwrap();
    let csv = result.to_csv();
    assert_eq!(csv.lines().count(), 3, "header + two runs");
    assert_eq!(csv.lines().filter(|l| l.ends_with(",1")).count(), 1, "one selected row");
}

#[test]
fn cross_validation_emits_four_zones_by_six_metrics() {
    let tiles = dataset(38);
    let cfg = TrainConfig {
        max_epochs: 1,
        batch_size: 16,
        seed: 5,
        ..TrainConfig::default()
    };
    let result = experiments::cross_validate::<f32>(
        &small_spec(NormKind::Batch),
        &tiles,
        &cfg,
        &OptimizerConfig::default(),
        &LossConfig::default(),
        0.125,
        1,
    )
    .unwrap();
    assert_eq!(result.folds.len(), 4);
    for fold in &result.folds {
        assert!(fold.error.is_none(), "fold {} failed: {:?}", fold.zone, fold.error);
        assert!(fold.test_metrics.is_some());
    }
    // per-fold standardization recomputed from that fold's training zones
    let stats: Vec<f64> = result
        .folds
        .iter()
        .map(|f| f.standardization.unwrap().mu)
        .collect();
    assert!(stats.windows(2).any(|w| w[0] != w[1]));

    let csv = result.to_csv("unet-batch");
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 7, "header + 6 metric rows");
    assert_eq!(lines[0], "model,metric,zone1,zone2,zone3,zone4");
    for line in &lines[1..] {
        assert_eq!(line.split(',').count(), 6, "model, metric, 4 zones");
    }
}

/// One optimization step on a single tile strictly decreases the Dice loss
/// for at least 95 of 100 seeds, for every normalization kind.
///
/// For the mode kind the probe runs in f64 at a tiny step: hard
/// per-activation reassignment makes the training loss piecewise smooth, and
/// at practical step sizes boundary flips (O(1) jumps) dominate a single
/// step's effect, so the decrease property holds in the locally-smooth
/// region where the gradient is defined. The normalization state is rewound
/// to its pre-step snapshot before the second forward so only the weight
/// update differs.
#[test]
fn single_step_decreases_dice_loss_on_one_tile() {
    fn trial<S: modeseg::scalar::Scalar>(
        kind: NormKind,
        lr: f64,
        seed: u64,
    ) -> bool {
        use modeseg::models::EntryKind;
        let mut r = common::rng(seed);
        let spec = ModelSpec {
            arch: if seed % 2 == 0 { Arch::Unet } else { Arch::Segnet },
            depth: 2,
            base_channels: 4,
            norm: NormConfig {
                kind,
                ..NormConfig::default()
            },
            ..ModelSpec::default()
        };
        let mut model = Model::<S>::build(&spec, seed).unwrap();
        // bimodal tile: water pixels low, land pixels high
        let labels: Vec<bool> = (0..256).map(|_| r.random_bool(0.4)).collect();
        let x = Tensor::from_vec(
            labels
                .iter()
                .map(|&w| {
                    let center = if w { -1.5 } else { 1.5 };
                    S::from_f64(center + r.random_range(-0.4..0.4))
                })
                .collect::<Vec<S>>(),
            [1, 1, 16, 16],
        )
        .unwrap();
        let target = Tensor::from_vec(
            labels
                .iter()
                .map(|&w| if w { S::ONE } else { S::ZERO })
                .collect::<Vec<S>>(),
            [1, 1, 16, 16],
        )
        .unwrap();
        let loss_cfg = LossConfig::default();
        let mut opt = Optimizer::new(OptimizerConfig {
            kind: OptimizerKind::Sgd,
            learning_rate: lr,
            ..OptimizerConfig::default()
        });

        let pristine = model.export_state();
        let mut rng = common::rng(seed ^ 0xABCD);
        let before = {
            let pred = model.forward_train(&x, &mut rng).unwrap();
            let loss = dice_loss(&pred, &target, &loss_cfg).unwrap();
            let grads = loss.backward().unwrap();
            opt.step(&mut model, &grads).unwrap();
            loss.item().unwrap()
        };
        // keep the stepped parameters, rewind norm-layer state
        let stepped = model.export_state();
        let merged: Vec<_> = stepped
            .iter()
            .zip(&pristine)
            .map(|(new, old)| {
                assert_eq!(new.name, old.name);
                if new.kind == EntryKind::Param {
                    new.clone()
                } else {
                    old.clone()
                }
            })
            .collect();
        model.import_state(&merged).unwrap();
        let after = {
            let pred = model.forward_train(&x, &mut rng).unwrap();
            dice_loss(&pred, &target, &loss_cfg).unwrap().item().unwrap()
        };
        after < before
    }

    for kind in [NormKind::None, NormKind::Batch] {
        let wins = (0..100u64).filter(|&s| trial::<f32>(kind, 1e-2, s)).count();
        assert!(wins >= 95, "{kind:?}: loss decreased for only {wins}/100 seeds");
    }
    let wins = (0..100u64)
        .filter(|&s| trial::<f64>(NormKind::Mode, 1e-9, s))
        .count();
    assert!(wins >= 95, "Mode: loss decreased for only {wins}/100 seeds");
}

/// BN-equipped and MN(K = 1)-equipped models with identical seeds follow
/// identical training trajectories.
#[test]
fn k1_mode_norm_training_trajectory_matches_batch_norm() {
    let tiles = dataset(39);
    let train: Vec<usize> = (0..32).collect();
    let val: Vec<usize> = (32..48).collect();
    let cfg = TrainConfig {
        max_epochs: 3,
        patience: 5,
        seed: 21,
        ..TrainConfig::default()
    };
    let opt = OptimizerConfig {
        learning_rate: 1e-3,
        ..OptimizerConfig::default()
    };
    let loss = LossConfig::default();

    let mut run = |kind: NormKind, modes: usize| {
        let spec = ModelSpec {
            arch: Arch::Unet,
            depth: 2,
            base_channels: 6,
            norm: NormConfig {
                kind,
                modes,
                ..NormConfig::default()
            },
            ..ModelSpec::default()
        };
        let mut model = Model::<f32>::build(&spec, 13).unwrap();
        trainer::train(&mut model, &tiles, &train, &val, &cfg, &opt, &loss).unwrap()
    };
    let bn = run(NormKind::Batch, 1);
    let mn = run(NormKind::Mode, 1);
    assert_eq!(bn.epochs.len(), mn.epochs.len());
    // The training path (batch statistics) is equivalent; the inference-mode
    // validation loss is not compared because the running statistics warm up
    // differently (the mixture seeds its running copies from the first batch).
    for (a, b) in bn.epochs.iter().zip(&mn.epochs) {
        assert!(
            (a.train_loss - b.train_loss).abs() <= 1e-5,
            "{} vs {}",
            a.train_loss,
            b.train_loss
        );
    }
}

/// A converged model scores at least nearly as well on its training tiles as
/// on validation.
#[test]
fn converged_model_train_dsc_dominates_validation() {
    let tiles = dataset(40);
    let plan = stratified_split(&tiles, (0.7, 0.1, 0.2), 2).unwrap();
    let cfg = TrainConfig {
        max_epochs: 15,
        patience: 5,
        batch_size: 16,
        seed: 6,
        ..TrainConfig::default()
    };
    let opt = OptimizerConfig {
        learning_rate: 2e-3,
        ..OptimizerConfig::default()
    };
    let loss = LossConfig::default();
    let mut model = Model::<f32>::build(&small_spec(NormKind::Batch), 30).unwrap();
    let record =
        trainer::train(&mut model, &tiles, &plan.train, &plan.val, &cfg, &opt, &loss).unwrap();
    let (_, train_metrics) =
        trainer::evaluate(&model, &tiles, &plan.train, &loss, cfg.batch_size).unwrap();
    let val_dsc = record.best_val_dsc();
    assert!(val_dsc > 0.6, "sanity: model learned something, dsc {val_dsc}");
    assert!(
        train_metrics.dsc >= val_dsc - 0.05,
        "train dsc {} vs val dsc {val_dsc}",
        train_metrics.dsc
    );
}
