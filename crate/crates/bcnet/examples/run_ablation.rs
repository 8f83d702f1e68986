//! Small-scale ablation: the {single,bilayer} x {fcn,gcn} grid trained on
//! identical data, printed as an aligned comparison table.
//!
//! Usage: cargo run --release --example run_ablation [iterations] [train_n] [test_n] [seed]

use bcnet::eval::{format_ablation_table, run_ablation};
use bcnet::head::HeadVariant;
use bcnet::synth::{Dataset, SceneConfig};
use bcnet::train::TrainConfig;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let arg = |i: usize, default: usize| -> usize {
        std::env::args()
            .nth(i)
            .and_then(|s| s.parse().ok())
            .unwrap_or(default)
    };
    let iterations = arg(1, 300);
    let train_n = arg(2, 192);
    let test_n = arg(3, 64);
    let seed = arg(4, 2) as u64;

    let scene = SceneConfig {
        overlap_lo: 0.2,
        overlap_hi: 0.8,
        seed: 31,
        ..SceneConfig::default()
    };
    let train_ds = Dataset::generate(&scene, train_n)?;
    let test_ds = Dataset::generate(
        &SceneConfig {
            seed: 32,
            ..scene.clone()
        },
        test_n,
    )?;

    let base = TrainConfig {
        iterations,
        warmup_iters: (iterations / 3).min(1000),
        seed,
        ..TrainConfig::default()
    };
    let configs: Vec<(String, TrainConfig)> = [
        HeadVariant::BilayerGcn,
        HeadVariant::BilayerFcn,
        HeadVariant::SingleGcn,
        HeadVariant::SingleFcn,
    ]
    .into_iter()
    .map(|variant| {
        (
            variant.as_str().to_string(),
            TrainConfig {
                variant,
                ..base.clone()
            },
        )
    })
    .collect();

    let rows = run_ablation(&configs, &train_ds, &test_ds, |label, row| {
        println!("[{label}] {}", row.csv());
    })?;
    println!("{}", format_ablation_table(&rows));
    Ok(())
}
