//! Run a briefly trained head on arbitrary ROI boxes of a full scene image
//! and report how well each predicted occludee mask matches its ground
//! truth.
//!
//! Usage: cargo run --release --example infer_boxes

use bcnet::head::{predict_mask, ForwardMode};
use bcnet::params::Binding;
use bcnet::synth::{resize_bilinear, resize_mask_nearest, Dataset, SceneConfig};
use bcnet::tensor::Graph;
use bcnet::train::{TrainConfig, Trainer};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let scene = SceneConfig {
        overlap_lo: 0.2,
        overlap_hi: 0.8,
        seed: 41,
        ..SceneConfig::default()
    };
    let train_ds = Dataset::generate(&scene, 192)?;
    let cfg = TrainConfig {
        iterations: 300,
        warmup_iters: 100,
        seed: 3,
        ..TrainConfig::default()
    };
    let mut trainer = Trainer::new(cfg.clone())?;
    trainer.train(&train_ds, None, |_| {})?;

    // fresh scenes as "detector output": the stored ROI box plays the
    // role of one proposal over the sample's crop image
    let eval_scene = SceneConfig {
        seed: 42,
        ..scene
    };
    let test = Dataset::generate(&eval_scene, 8)?;
    let cs = cfg.head.crop_size();
    let out_size = cfg.head.out_size();
    for (i, sample) in test.samples.iter().enumerate() {
        let d = sample.crop_size;
        let full = [0.0, 0.0, d as f32, d as f32];
        let crop = resize_bilinear(&sample.image, d, d, 3, full, cs, cs);
        let mut g = Graph::new();
        let mut bind = Binding::default();
        let x = g.constant(crop, &[cs, cs, 3]);
        let out = trainer
            .model
            .forward_crop(&mut g, &mut bind, x, ForwardMode::Infer, false)?;
        let pred = predict_mask(
            None,
            None,
            g.data(out.occludee_boundary),
            g.data(out.occludee_mask),
            0.5,
        );
        let gt = resize_mask_nearest(&sample.occludee_modal, d, d, full, out_size, out_size);
        let inter = pred
            .occludee_mask
            .iter()
            .zip(&gt)
            .filter(|(&p, &t)| p && t)
            .count();
        let union = pred
            .occludee_mask
            .iter()
            .zip(&gt)
            .filter(|(&p, &t)| p || t)
            .count();
        let iou = if union == 0 {
            1.0
        } else {
            inter as f32 / union as f32
        };
        println!(
            "box {i}: roi {:?} overlap {:.2} occludee-modal IoU {iou:.3}",
            sample.roi_box, sample.overlap_ratio
        );
    }
    Ok(())
}
