//! Rough timing of one training step at desk scale.
use std::time::Instant;

use modeseg::models::{Arch, Model, ModelSpec};
use modeseg::norm::{NormConfig, NormKind};
use modeseg::objectives::{dice_loss, LossConfig};
use modeseg::optim::{Optimizer, OptimizerConfig};
use modeseg::tensor::Tensor;
use rand::SeedableRng;

fn main() {
    for kind in [NormKind::Batch, NormKind::Mode] {
        let spec = ModelSpec {
            arch: Arch::Unet,
            depth: 3,
            base_channels: 16,
            norm: NormConfig { kind, ..Default::default() },
            dropout_rate: 0.1,
            ..Default::default()
        };
        let mut model = Model::<f32>::build(&spec, 1).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let x = Tensor::from_vec(
            (0..32 * 64 * 64).map(|i| ((i % 97) as f32) * 0.02 - 1.0).collect(),
            [32, 1, 64, 64],
        )
        .unwrap();
        let t = Tensor::from_vec(
            (0..32 * 64 * 64).map(|i| ((i % 3 == 0) as u8) as f32).collect(),
            [32, 1, 64, 64],
        )
        .unwrap();
        let mut opt = Optimizer::new(OptimizerConfig::default());
        // warmup
        let y = model.forward_train(&x, &mut rng).unwrap();
        let l = dice_loss(&y, &t, &LossConfig::default()).unwrap();
        let g = l.backward().unwrap();
        opt.step(&mut model, &g).unwrap();

        let t0 = Instant::now();
        let y = model.forward_train(&x, &mut rng).unwrap();
        let fwd = t0.elapsed();
        let l = dice_loss(&y, &t, &LossConfig::default()).unwrap();
        let t1 = Instant::now();
        let g = l.backward().unwrap();
        let bwd = t1.elapsed();
        let t2 = Instant::now();
        opt.step(&mut model, &g).unwrap();
        let step = t2.elapsed();
        let t3 = Instant::now();
        let _ = model.forward_eval(&x).unwrap();
        let eval = t3.elapsed();
        println!(
            "{kind:?}: forward {:?} backward {:?} optstep {:?} eval {:?}",
            fwd, bwd, step, eval
        );
    }
}
