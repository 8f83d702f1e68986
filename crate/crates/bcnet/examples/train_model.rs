//! Train a bilayer-gcn head on a freshly generated synthetic dataset and
//! print the loss trace plus a final evaluation.
//!
//! Usage: cargo run --release --example train_model [iterations]

use bcnet::eval::evaluate;
use bcnet::synth::{Dataset, SceneConfig};
use bcnet::train::{TraceRow, TrainConfig, Trainer};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let iterations: usize = std::env::args()
        .nth(1)
        .map(|s| s.parse())
        .transpose()?
        .unwrap_or(600);

    let scene = SceneConfig {
        overlap_lo: 0.2,
        overlap_hi: 0.8,
        seed: 11,
        ..SceneConfig::default()
    };
    let train_ds = Dataset::generate(&scene, 256)?;
    let test_ds = Dataset::generate(
        &SceneConfig {
            seed: 12,
            ..scene.clone()
        },
        64,
    )?;
    println!(
        "train: {} samples ({} occluded), test: {} samples",
        train_ds.samples.len(),
        train_ds.occluded_count(),
        test_ds.samples.len()
    );

    let cfg = TrainConfig {
        iterations,
        warmup_iters: iterations / 3,
        seed: 5,
        ..TrainConfig::default()
    };
    let mut trainer = Trainer::new(cfg.clone())?;
    println!("{}", TraceRow::CSV_HEADER);
    let t0 = std::time::Instant::now();
    trainer.train(&train_ds, None, |row| println!("{}", row.csv()))?;
    println!(
        "trained {} iterations in {:.1}s",
        iterations,
        t0.elapsed().as_secs_f32()
    );

    let report = evaluate(&trainer.model, &cfg, &test_ds, 0.5)?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}
