//! Convergence pilot: BN vs MN at desk scale on the synthetic benchmark.
use modeseg::data::{standardize, stratified_split, synth_scene, tile, SynthConfig};
use modeseg::models::{Arch, Model, ModelSpec};
use modeseg::norm::{NormConfig, NormKind};
use modeseg::objectives::{LossConfig, LossKind};
use modeseg::optim::{OptimizerConfig, OptimizerKind};
use modeseg::trainer::{train, TrainConfig};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let arch = if args.get(1).map(|s| s.as_str()) == Some("segnet") { Arch::Segnet } else { Arch::Unet };
    let lr: f64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(1e-4);
    let dropout: f64 = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(0.1);
    let seeds: u64 = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(2);
    let looks: u32 = args.get(5).and_then(|s| s.parse().ok()).unwrap_or(0);
    let land_mean: f64 = args.get(6).and_then(|s| s.parse().ok()).unwrap_or(-7.0);
    let label_noise: f64 = args.get(7).and_then(|s| s.parse().ok()).unwrap_or(0.0);
    let em_iters: usize = args.get(8).and_then(|s| s.parse().ok()).unwrap_or(1);
    let only: String = args.get(9).cloned().unwrap_or_else(|| "both".into());

    let synth = SynthConfig {
        coverage: 0.35,
        land_mean_db: land_mean,
        speckle_looks: if looks > 0 { Some(looks) } else { None },
        label_noise,
        ..SynthConfig::default()
    };
    eprintln!("synth: land mean {land_mean} dB, speckle {looks} looks, label noise {label_noise}");
    let (raster, mask) = synth_scene(1024, 832, &synth, 1234).unwrap();
    let raw = tile(&raster, &mask, 64).unwrap();
    eprintln!("tiles: {}", raw.len());

    for seed in 0..seeds {
        let mut tiles = raw.clone();
        let plan = stratified_split(&tiles, (0.7, 0.1, 0.2), seed).unwrap();
        standardize(&mut tiles, &plan.train).unwrap();
        for kind in [NormKind::Batch, NormKind::Mode] {
            match (only.as_str(), kind) {
                ("batch", NormKind::Mode) | ("mode", NormKind::Batch) => continue,
                _ => {}
            }
            let spec = ModelSpec {
                arch,
                depth: 3,
                base_channels: 16,
                norm: NormConfig { kind, modes: 2, em_iters, ..Default::default() },
                dropout_rate: dropout,
                ..Default::default()
            };
            let cfg = TrainConfig { seed, max_epochs: 60, patience: 5, ..Default::default() };
            let opt = OptimizerConfig { kind: OptimizerKind::Adam, learning_rate: lr, ..Default::default() };
            let loss = LossConfig { kind: LossKind::Dice, ..Default::default() };
            let mut model = Model::<f32>::build(&spec, seed).unwrap();
            let rec = train(&mut model, &tiles, &plan.train, &plan.val, &cfg, &opt, &loss).unwrap();
            let curve: Vec<String> = rec.epochs.iter().map(|e| format!("{:.4}", e.val_loss)).collect();
            eprintln!(
                "{arch:?} {kind:?} seed {seed}: stop {} best {} time {:.1}s dsc {:.3} | {}",
                rec.stopped_epoch, rec.best_epoch, rec.total_seconds,
                rec.best_val_dsc(), curve.join(" ")
            );
        }
    }
}
