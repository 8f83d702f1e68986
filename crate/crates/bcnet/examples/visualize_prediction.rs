//! Train briefly, then write a heatmap panel (input crop + four sigmoid
//! maps) for a handful of samples, and check that the occluder-mask heat
//! concentrates inside the ground-truth occluder region.
//!
//! Usage: cargo run --release --example visualize_prediction [out_dir]

use bcnet::head::ForwardMode;
use bcnet::params::Binding;
use bcnet::pnm::write_ppm;
use bcnet::synth::{resize_bilinear, Dataset, SceneConfig};
use bcnet::tensor::{sigmoid_scalar, Graph};
use bcnet::train::{prepare_sample, TrainConfig, Trainer};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out_dir = std::path::PathBuf::from(
        std::env::args()
            .nth(1)
            .unwrap_or_else(|| "target/example-heatmaps".into()),
    );
    std::fs::create_dir_all(&out_dir)?;

    let scene = SceneConfig {
        overlap_lo: 0.3,
        overlap_hi: 0.8,
        seed: 51,
        ..SceneConfig::default()
    };
    let train_ds = Dataset::generate(&scene, 192)?;
    let cfg = TrainConfig {
        iterations: 600,
        warmup_iters: 200,
        seed: 4,
        ..TrainConfig::default()
    };
    let mut trainer = Trainer::new(cfg.clone())?;
    trainer.train(&train_ds, None, |_| {})?;

    let test = Dataset::generate(
        &SceneConfig {
            seed: 52,
            ..scene
        },
        4,
    )?;
    let cs = cfg.head.crop_size();
    let d = cfg.head.out_size();
    for (i, sample) in test.samples.iter().enumerate() {
        let prep = prepare_sample(sample, &cfg.head, 1.0, cfg.boundary_thickness);
        let mut g = Graph::new();
        let mut bind = Binding::default();
        let x = g.constant(prep.crop.clone(), &[cs, cs, 3]);
        let out = trainer
            .model
            .forward_crop(&mut g, &mut bind, x, ForwardMode::Viz, false)?;

        let heat: Vec<f32> = g
            .data(out.occluder_mask.expect("bilayer head emits occluder maps"))
            .iter()
            .map(|&z| sigmoid_scalar(z))
            .collect();
        let (mut inside, mut n_in, mut outside, mut n_out) = (0.0f32, 0, 0.0f32, 0);
        for (h, m) in heat.iter().zip(prep.gt.occluder_mask.iter().map(|&v| v > 0.5)) {
            if m {
                inside += h;
                n_in += 1;
            } else {
                outside += h;
                n_out += 1;
            }
        }
        let mean_in = if n_in > 0 { inside / n_in as f32 } else { 0.0 };
        let mean_out = if n_out > 0 { outside / n_out as f32 } else { 0.0 };
        println!(
            "sample {i}: occluder heat inside GT {mean_in:.3}, outside {mean_out:.3}"
        );

        // panel layout: crop | occluder boundary | occluder mask |
        // occludee boundary | occludee mask
        let crop_panel =
            resize_bilinear(&prep.crop, cs, cs, 3, [0.0, 0.0, cs as f32, cs as f32], d, d);
        let mut panels = vec![crop_panel];
        for logits in [
            g.data(out.occluder_boundary.unwrap()).to_vec(),
            g.data(out.occluder_mask.unwrap()).to_vec(),
            g.data(out.occludee_boundary).to_vec(),
            g.data(out.occludee_mask).to_vec(),
        ] {
            panels.push(
                logits
                    .iter()
                    .flat_map(|&z| {
                        let v = sigmoid_scalar(z);
                        [v, v, v]
                    })
                    .collect(),
            );
        }
        let cols = panels.len();
        let mut row_img = vec![0.0f32; d * cols * d * 3];
        for (pi, panel) in panels.iter().enumerate() {
            for y in 0..d {
                for xx in 0..d {
                    for c in 0..3 {
                        row_img[(y * cols * d + pi * d + xx) * 3 + c] = panel[(y * d + xx) * 3 + c];
                    }
                }
            }
        }
        let path = out_dir.join(format!("heatmap_{i}.ppm"));
        write_ppm(&path, &row_img, cols * d, d)?;
        println!("wrote {}", path.display());
    }
    Ok(())
}
