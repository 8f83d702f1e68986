//! Train briefly, checkpoint, reload, and evaluate the reloaded model,
//! printing the JSON report with overall and occluded-split metrics.
//!
//! Usage: cargo run --release --example evaluate_model [iterations]

use bcnet::eval::evaluate;
use bcnet::synth::{Dataset, SceneConfig};
use bcnet::train::{model_from_archive, TrainConfig, Trainer};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let iterations: usize = std::env::args()
        .nth(1)
        .map(|s| s.parse())
        .transpose()?
        .unwrap_or(300);

    // overlap from 0 so the test set carries both split populations
    let scene = SceneConfig {
        overlap_lo: 0.0,
        overlap_hi: 0.8,
        seed: 21,
        ..SceneConfig::default()
    };
    let train_ds = Dataset::generate(&scene, 192)?;
    let test_ds = Dataset::generate(
        &SceneConfig {
            seed: 22,
            ..scene.clone()
        },
        64,
    )?;

    let cfg = TrainConfig {
        iterations,
        warmup_iters: iterations / 3,
        seed: 1,
        ..TrainConfig::default()
    };
    let mut trainer = Trainer::new(cfg)?;
    trainer.train(&train_ds, None, |row| println!("{}", row.csv()))?;

    // evaluate through a checkpoint round trip, as the CLI does
    let archive = trainer.to_archive();
    let (model, cfg) = model_from_archive(&archive)?;
    let report = evaluate(&model, &cfg, &test_ds, 0.5)?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}
