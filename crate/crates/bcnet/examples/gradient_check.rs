//! Central finite-difference check of analytic gradients through the full
//! bilayer head and total loss, over 50 randomly chosen parameters.
//!
//! Usage: cargo run --release --example gradient_check

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use bcnet::head::{ForwardMode, HeadConfig, HeadVariant, Model};
use bcnet::loss::total_loss;
use bcnet::params::Binding;
use bcnet::synth::{generate_scene, SceneConfig};
use bcnet::tensor::Graph;
use bcnet::train::{prepare_sample, TrainConfig};

/// Loss at the current parameters, evaluated by the f64 reference forward
/// so finite differences are not drowned in f32 rounding noise. The
/// fingerprint identifies which smooth piece of the loss surface was hit.
fn loss_value(
    model: &Model,
    crop: &[f32],
    gt: &bcnet::loss::GroundTruthMaps,
) -> (f64, bcnet::reference::Fingerprint) {
    bcnet::reference::total_loss_probed(
        &model.store,
        &model.cfg,
        model.variant,
        crop,
        gt,
        &TrainConfig::default().weights,
    )
}

fn main() {
    let head = HeadConfig {
        roi: 14,
        channels: 16,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let mut model = Model::init(head, HeadVariant::BilayerGcn, &mut rng);
    let scene = SceneConfig {
        overlap_lo: 0.2,
        overlap_hi: 0.8,
        seed: 3,
        ..SceneConfig::default()
    };
    let sample = generate_scene(&scene, 1).unwrap();
    let cfg = TrainConfig::default();
    let prep = prepare_sample(&sample, &head, 1.0, cfg.boundary_thickness);

    // analytic gradients
    let cs = head.crop_size();
    let mut g = Graph::new();
    let mut bind = Binding::default();
    let x = g.constant(prep.crop.clone(), &[cs, cs, 3]);
    let out = model
        .forward_crop(&mut g, &mut bind, x, ForwardMode::Train, true)
        .unwrap();
    let (loss, bd) = total_loss(&mut g, &out, &prep.gt, &cfg.weights).unwrap();
    g.backward(loss).unwrap();
    let grads = bind.collect_grads(&g, &model.store);
    println!("loss {:.6}", bd.total);

    // 50 random (param, index) probes
    let h = 1e-3f32;
    let t0 = std::time::Instant::now();
    let n_params = model.store.len();
    let mut worst = 0.0f64;
    let mut probe = 0;
    while probe < 50 {
        let pi = rng.gen_range(0..n_params);
        let len = model.store.get(pi).data.len();
        let ei = rng.gen_range(0..len);
        let orig = model.store.get(pi).data[ei];
        model.store.get_mut(pi).data[ei] = orig + h;
        let (fp, sig_p) = loss_value(&model, &prep.crop, &prep.gt);
        model.store.get_mut(pi).data[ei] = orig - h;
        let (fm, sig_m) = loss_value(&model, &prep.crop, &prep.gt);
        model.store.get_mut(pi).data[ei] = orig;
        if sig_p != sig_m {
            // the interval [th-h, th+h] straddles a ReLU kink: central
            // differences are undefined there, draw another parameter
            continue;
        }
        let num = (fp - fm) / (2.0 * h as f64);
        let ana = grads[pi][ei] as f64;
        let rel = (num - ana).abs() / num.abs().max(ana.abs()).max(1e-4);
        worst = worst.max(rel);
        println!(
            "probe {probe:2}: {} [{}] analytic {ana:+.6e} numeric {num:+.6e} rel {rel:.2e}",
            model.store.name(pi),
            ei
        );
        probe += 1;
    }
    println!(
        "worst relative error {worst:.3e} in {:.1}s",
        t0.elapsed().as_secs_f32()
    );
}
