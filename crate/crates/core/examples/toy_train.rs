//! Trains on the synthetic set and prints metrics along the way.
//!
//! `cargo run --release -p allweather-core --example toy_train -- [seed] [steps] [every]`

use std::time::Instant;

use allweather_core::synthetic::synthetic_pairs;
use allweather_core::trainer::{baseline, evaluate, train_step, TrainState};
use allweather_core::dataset::BatchStream;
use allweather_core::TrainConfig;

fn main() -> allweather_core::Result<()> {
    let args: Vec<u64> = std::env::args().skip(1).map(|a| a.parse().expect("integer")).collect();
    let seed = args.first().copied().unwrap_or(0);
    let steps = args.get(1).copied().unwrap_or(500);
    let every = args.get(2).copied().unwrap_or(50);
    let mut config = match std::env::var("TOY_CONFIG") {
        Ok(p) => TrainConfig::load(p)?,
        Err(_) => TrainConfig::default(),
    };
    config.seed = seed;
    config.steps = steps;
    let pairs = synthetic_pairs(8, 128, seed);
    let base = baseline(&pairs)?;
    println!("input: ssim {:.4} psnr {:.3}", base.mean_ssim(), base.mean_psnr());
    let mut state = TrainState::new(&config)?;
    let stream = BatchStream::new(pairs.len(), config.batch_size, config.seed)?;
    let t0 = Instant::now();
    while state.step < steps {
        let batch: Vec<_> = stream.batch_at(state.step).into_iter().map(|i| &pairs[i]).collect();
        let r = train_step(&mut state, &batch)?;
        if state.step % every == 0 {
            let m = evaluate(state.generator(), config.attention, &pairs)?;
            println!(
                "step {:4} {:6.1}s  G {:.3}/{:.3}/{:.3} D {:.3}/{:.3}/{:.3}  ssim {:+.4} psnr {:+.3}",
                state.step,
                t0.elapsed().as_secs_f64(),
                r.scene.generator,
                r.object.generator,
                r.texture.generator,
                r.scene.discriminator,
                r.object.discriminator,
                r.texture.discriminator,
                m.mean_ssim() - base.mean_ssim(),
                m.mean_psnr() - base.mean_psnr()
            );
        }
    }
    Ok(())
}
