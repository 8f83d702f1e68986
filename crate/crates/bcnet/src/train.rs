//! SGD-with-momentum training loop with constant warm-up, balance-sampled
//! batches, checkpointing, and a deterministic per-iteration RNG scheme so
//! a resumed run is bit-identical to an uninterrupted one.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{f32_to_text, text_to_f32, Archive};
use crate::error::{Error, Result};
use crate::head::{ForwardMode, HeadConfig, HeadVariant, Model};
use crate::loss::{total_loss, GroundTruthMaps, LossBreakdown, LossWeights};
use crate::params::Binding;
use crate::synth::{balance_sample, resize_bilinear, resize_mask_nearest, Dataset, OcclusionSample};
use crate::tensor::Graph;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Desk-scale default 3000; the full-scale schedule runs 90000.
    pub iterations: usize,
    pub batch: usize,
    pub lr: f32,
    pub momentum: f32,
    pub warmup_iters: usize,
    /// Constant warm-up multiplier applied below `warmup_iters`.
    pub warmup_factor: f32,
    pub seed: u64,
    pub weights: LossWeights,
    pub variant: HeadVariant,
    /// Occluder contour supervision (lambda2 zeroed when off).
    pub supervise_contour: bool,
    /// Occluder mask supervision (lambda3 zeroed when off).
    pub supervise_mask: bool,
    /// Occlusion-aware feature guidance; when off the fusion transform is
    /// frozen at zero, cutting the occluder branch out of the occludee path.
    pub guidance: bool,
    pub head: HeadConfig,
    /// Crop-scale jitter amplitude (0 disables).
    pub scale_jitter: f32,
    pub boundary_thickness: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            iterations: 3000,
            batch: 16,
            lr: 0.01,
            momentum: 0.9,
            warmup_iters: 1000,
            warmup_factor: 1.0 / 3.0,
            seed: 0,
            weights: LossWeights::default(),
            variant: HeadVariant::BilayerGcn,
            supervise_contour: true,
            supervise_mask: true,
            guidance: true,
            // desk-scale width; the full-scale head uses 256 channels
            head: HeadConfig {
                roi: 14,
                channels: 16,
            },
            scale_jitter: 0.1,
            boundary_thickness: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.warmup_iters >= self.iterations {
            return Err(Error::Usage(format!(
                "warmup_iters {} must be below iterations {}",
                self.warmup_iters, self.iterations
            )));
        }
        if self.batch == 0 {
            return Err(Error::Usage("batch must be >= 1".into()));
        }
        self.weights.validate();
        Ok(())
    }

    /// Loss weights with the occluder-supervision toggles applied.
    pub fn effective_weights(&self) -> LossWeights {
        let mut w = self.weights;
        if !self.supervise_contour {
            w.l2 = 0.0;
        }
        if !self.supervise_mask {
            w.l3 = 0.0;
        }
        w
    }
}

/// Piecewise-constant schedule: lr * warmup_factor below warmup_iters,
/// lr afterwards. No decay.
pub fn lr_at(cfg: &TrainConfig, iter: usize) -> f32 {
    if iter < cfg.warmup_iters {
        cfg.lr * cfg.warmup_factor
    } else {
        cfg.lr
    }
}

/// Standard (non-Nesterov) momentum update: v <- m v + g; p <- p - lr v.
/// Frozen parameters are skipped.
pub fn sgd_momentum_step(
    store: &mut crate::params::ParamStore,
    grads: &[Vec<f32>],
    lr: f32,
    momentum: f32,
) {
    for i in 0..store.len() {
        let p = store.get_mut(i);
        if p.frozen {
            continue;
        }
        for j in 0..p.data.len() {
            p.velocity[j] = momentum * p.velocity[j] + grads[i][j];
            p.data[j] -= lr * p.velocity[j];
        }
    }
}

/// One loss-log row, emitted every 50 iterations.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct TraceRow {
    pub iter: usize,
    pub total: f32,
    pub occluder_b: f32,
    pub occluder_m: f32,
    pub occludee_b: f32,
    pub occludee_m: f32,
    pub lr: f32,
}

impl TraceRow {
    pub const CSV_HEADER: &'static str = "iter,total,occluder_b,occluder_m,occludee_b,occludee_m,lr";

    pub fn csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.iter, self.total, self.occluder_b, self.occluder_m, self.occludee_b,
            self.occludee_m, self.lr
        )
    }
}

/// Image crop plus supervision maps at head resolution for one sample.
pub struct PreparedSample {
    pub crop: Vec<f32>,
    pub gt: GroundTruthMaps,
}

/// Resample one stored sample to the stem input size, with an optional
/// centered scale jitter applied identically to image and masks.
pub fn prepare_sample(
    sample: &OcclusionSample,
    head: &HeadConfig,
    jitter_scale: f32,
    boundary_thickness: usize,
) -> PreparedSample {
    let d = sample.crop_size;
    let half = d as f32 / 2.0;
    let ext = half * jitter_scale;
    let region = [half - ext, half - ext, half + ext, half + ext];
    let cs = head.crop_size();
    let os = head.out_size();
    let crop = resize_bilinear(&sample.image, d, d, 3, region, cs, cs);
    let occluder = resize_mask_nearest(&sample.occluder_mask, d, d, region, os, os);
    let modal = resize_mask_nearest(&sample.occludee_modal, d, d, region, os, os);
    let gt = GroundTruthMaps::from_bool(os, &occluder, &modal, boundary_thickness);
    PreparedSample { crop, gt }
}

pub struct Trainer {
    pub cfg: TrainConfig,
    pub model: Model,
    pub iter: usize,
    last_finite_loss: f32,
}

impl Trainer {
    pub fn new(cfg: TrainConfig) -> Result<Trainer> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut model = Model::init(cfg.head, cfg.variant, &mut rng);
        if cfg.variant.bilayer() && !cfg.guidance {
            let p = model.store.by_name_mut("fuse.w").unwrap();
            p.data.fill(0.0);
            model.store.freeze("fuse.w");
        }
        Ok(Trainer {
            cfg,
            model,
            iter: 0,
            last_finite_loss: f32::INFINITY,
        })
    }

    fn iter_rng(&self, stream: u64) -> ChaCha8Rng {
        // fresh stream per (seed, iteration, purpose): resuming from a
        // checkpoint replays the identical sequence
        ChaCha8Rng::seed_from_u64(
            self.cfg
                .seed
                .wrapping_mul(0x9E37_79B9_7F4A_7C15)
                .wrapping_add(self.iter as u64)
                .wrapping_add(stream << 56),
        )
    }

    /// One optimization step over a balance-sampled batch.
    pub fn step(&mut self, ds: &Dataset) -> Result<LossBreakdown> {
        let mut sample_rng = self.iter_rng(1);
        let mut jitter_rng = self.iter_rng(2);
        let batch = balance_sample(&ds.samples, self.cfg.batch, &mut sample_rng)?;
        let w = self.cfg.effective_weights();
        let mut grad_sum: Vec<Vec<f32>> = (0..self.model.store.len())
            .map(|i| vec![0.0; self.model.store.get(i).data.len()])
            .collect();
        let mut breakdown = LossBreakdown::default();
        for &si in &batch {
            let jitter = if self.cfg.scale_jitter > 0.0 {
                1.0 + jitter_rng.gen_range(-self.cfg.scale_jitter..self.cfg.scale_jitter)
            } else {
                1.0
            };
            let prep = prepare_sample(
                &ds.samples[si],
                &self.cfg.head,
                jitter,
                self.cfg.boundary_thickness,
            );
            let cs = self.cfg.head.crop_size();
            let mut g = Graph::new();
            let mut bind = Binding::default();
            let crop = g.constant(prep.crop, &[cs, cs, 3]);
            let out = self
                .model
                .forward_crop(&mut g, &mut bind, crop, ForwardMode::Train, true)?;
            let (loss, bd) = total_loss(&mut g, &out, &prep.gt, &w)?;
            if !bd.total.is_finite() {
                return Err(Error::NanLoss {
                    iter: self.iter,
                    last_loss: self.last_finite_loss,
                });
            }
            g.backward(loss)?;
            let grads = bind.collect_grads(&g, &self.model.store);
            for (acc, gr) in grad_sum.iter_mut().zip(&grads) {
                for (a, v) in acc.iter_mut().zip(gr) {
                    *a += v;
                }
            }
            breakdown.total += bd.total;
            breakdown.occluder_boundary += bd.occluder_boundary;
            breakdown.occluder_mask += bd.occluder_mask;
            breakdown.occludee_boundary += bd.occludee_boundary;
            breakdown.occludee_mask += bd.occludee_mask;
        }
        let inv = 1.0 / batch.len() as f32;
        for gr in &mut grad_sum {
            for v in gr.iter_mut() {
                *v *= inv;
            }
        }
        breakdown.total *= inv;
        breakdown.occluder_boundary *= inv;
        breakdown.occluder_mask *= inv;
        breakdown.occludee_boundary *= inv;
        breakdown.occludee_mask *= inv;
        let lr = lr_at(&self.cfg, self.iter);
        sgd_momentum_step(&mut self.model.store, &grad_sum, lr, self.cfg.momentum);
        self.last_finite_loss = breakdown.total;
        self.iter += 1;
        Ok(breakdown)
    }

    /// Run to `cfg.iterations`, logging every 50 iterations and writing a
    /// checkpoint every 500 when a directory is given.
    pub fn train(
        &mut self,
        ds: &Dataset,
        ckpt_dir: Option<&Path>,
        mut on_row: impl FnMut(&TraceRow),
    ) -> Result<Vec<TraceRow>> {
        let mut rows = Vec::new();
        while self.iter < self.cfg.iterations {
            let lr = lr_at(&self.cfg, self.iter);
            let bd = self.step(ds)?;
            if self.iter % 50 == 0 {
                let row = TraceRow {
                    iter: self.iter,
                    total: bd.total,
                    occluder_b: bd.occluder_boundary,
                    occluder_m: bd.occluder_mask,
                    occludee_b: bd.occludee_boundary,
                    occludee_m: bd.occludee_mask,
                    lr,
                };
                on_row(&row);
                rows.push(row);
            }
            if self.iter % 500 == 0 {
                if let Some(dir) = ckpt_dir {
                    std::fs::create_dir_all(dir)
                        .map_err(|e| Error::io(dir.display().to_string(), e))?;
                    self.to_archive().save(&dir.join(format!("ckpt_{:06}.bcnt", self.iter)))?;
                }
            }
        }
        Ok(rows)
    }

    pub fn to_archive(&self) -> Archive {
        let mut a = Archive::default();
        for (name, p) in self.model.store.iter() {
            a.push(name, &p.shape, p.data.clone());
        }
        for (name, p) in self.model.store.iter() {
            a.push(&format!("opt/{name}"), &p.shape, p.velocity.clone());
        }
        a.push("meta/iteration", &[1], vec![self.iter as f32]);
        let cfg_json = serde_json::to_string(&self.cfg).unwrap();
        let encoded = text_to_f32(&cfg_json);
        a.push("meta/config_json", &[encoded.len()], encoded);
        a
    }

    pub fn from_archive(a: &Archive) -> Result<Trainer> {
        let cfg_entry = a
            .get("meta/config_json")
            .ok_or_else(|| Error::format("checkpoint", "missing meta/config_json"))?;
        let cfg_json = f32_to_text(&cfg_entry.data)
            .ok_or_else(|| Error::format("checkpoint", "corrupt config echo"))?;
        let cfg: TrainConfig = serde_json::from_str(&cfg_json)
            .map_err(|e| Error::format("checkpoint", e.to_string()))?;
        let mut trainer = Trainer::new(cfg)?;
        for i in 0..trainer.model.store.len() {
            let name = trainer.model.store.name(i).to_string();
            let entry = a
                .get(&name)
                .ok_or_else(|| Error::format("checkpoint", format!("missing tensor {name}")))?;
            let vel = a
                .get(&format!("opt/{name}"))
                .ok_or_else(|| Error::format("checkpoint", format!("missing opt/{name}")))?;
            let p = trainer.model.store.get_mut(i);
            if entry.dims != p.shape {
                return Err(Error::format(
                    "checkpoint",
                    format!("shape mismatch for {name}: {:?} vs {:?}", entry.dims, p.shape),
                ));
            }
            p.data = entry.data.clone();
            p.velocity = vel.data.clone();
        }
        let it = a
            .get("meta/iteration")
            .ok_or_else(|| Error::format("checkpoint", "missing meta/iteration"))?;
        trainer.iter = it.data[0] as usize;
        trainer.last_finite_loss = f32::INFINITY;
        Ok(trainer)
    }
}

/// Rebuild a frozen model from a checkpoint, for evaluation and inference.
pub fn model_from_archive(a: &Archive) -> Result<(Model, TrainConfig)> {
    let t = Trainer::from_archive(a)?;
    Ok((t.model, t.cfg))
}
