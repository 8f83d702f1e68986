//! Evaluation: occludee mask IoU, boundary F-score, simplified AP over
//! ground-truth ROIs, and the occluded-split breakdown; plus the ablation
//! driver comparing head variants on identical data.
//!
//! AP here matches each ROI's single prediction against its own ground
//! truth, score-ranked, so values are not comparable in absolute terms to
//! detector-based COCO AP.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::gcn::Adjacency;
use crate::head::{predict_mask, BlockOp, ForwardMode, Model};
use crate::params::Binding;
use crate::synth::Dataset;
use crate::tensor::{sigmoid_scalar, Graph};
use crate::train::{prepare_sample, TrainConfig, Trainer};

/// Overlap threshold defining the occluded split.
pub const OCCLUDED_SPLIT_MIN_OVERLAP: f32 = 0.2;

#[derive(Debug, Clone, Copy, Default, Serialize)]
pub struct SplitMetrics {
    pub count: usize,
    pub mean_iou: f32,
    pub mean_boundary_f: f32,
    pub ap: f32,
    pub ap50: f32,
}

#[derive(Debug, Clone, Serialize)]
pub struct LossCurveSummary {
    pub first: f32,
    pub last: f32,
    pub min: f32,
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub overall: SplitMetrics,
    pub occluded: SplitMetrics,
    pub non_occluded: SplitMetrics,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub loss_curve: Option<LossCurveSummary>,
}

struct SampleEval {
    iou: f32,
    boundary_f: f32,
    score: f32,
    occluded: bool,
}

fn mask_iou(pred: &[bool], gt: &[bool]) -> f32 {
    let mut inter = 0usize;
    let mut union = 0usize;
    for (&p, &g) in pred.iter().zip(gt) {
        if p && g {
            inter += 1;
        }
        if p || g {
            union += 1;
        }
    }
    if union == 0 {
        1.0
    } else {
        inter as f32 / union as f32
    }
}

fn boundary_f1(pred: &[bool], gt: &[bool]) -> f32 {
    let tp = pred.iter().zip(gt).filter(|(&p, &g)| p && g).count() as f32;
    let np = pred.iter().filter(|&&p| p).count() as f32;
    let ng = gt.iter().filter(|&&g| g).count() as f32;
    if np == 0.0 && ng == 0.0 {
        return 1.0;
    }
    if np == 0.0 || ng == 0.0 || tp == 0.0 {
        return 0.0;
    }
    let (prec, rec) = (tp / np, tp / ng);
    2.0 * prec * rec / (prec + rec)
}

/// Average precision by all-point interpolation over one score-ranked list,
/// one prediction per ground-truth ROI.
fn average_precision(mut scored: Vec<(f32, bool)>) -> f32 {
    if scored.is_empty() {
        return 0.0;
    }
    let n_gt = scored.len() as f32;
    scored.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
    let mut tp = 0.0f32;
    let mut points: Vec<(f32, f32)> = Vec::with_capacity(scored.len());
    for (rank, (_, hit)) in scored.iter().enumerate() {
        if *hit {
            tp += 1.0;
        }
        points.push((tp / n_gt, tp / (rank as f32 + 1.0)));
    }
    // precision envelope, then sum over recall steps
    let mut ap = 0.0f32;
    let mut prev_recall = 0.0f32;
    for i in 0..points.len() {
        let max_prec = points[i..]
            .iter()
            .map(|p| p.1)
            .fold(f32::NEG_INFINITY, f32::max);
        let (recall, _) = points[i];
        if recall > prev_recall {
            ap += (recall - prev_recall) * max_prec;
            prev_recall = recall;
        }
    }
    ap
}

fn split_metrics(evals: &[&SampleEval]) -> SplitMetrics {
    if evals.is_empty() {
        return SplitMetrics::default();
    }
    let n = evals.len() as f32;
    let mean_iou = evals.iter().map(|e| e.iou).sum::<f32>() / n;
    let mean_boundary_f = evals.iter().map(|e| e.boundary_f).sum::<f32>() / n;
    let ap50 = average_precision(evals.iter().map(|e| (e.score, e.iou >= 0.5)).collect());
    let mut ap_sum = 0.0f32;
    let mut t = 0.5f32;
    let mut count = 0;
    while t < 0.951 {
        ap_sum += average_precision(evals.iter().map(|e| (e.score, e.iou >= t)).collect());
        t += 0.05;
        count += 1;
    }
    SplitMetrics {
        count: evals.len(),
        mean_iou,
        mean_boundary_f,
        ap: ap_sum / count as f32,
        ap50,
    }
}

/// Evaluate a frozen model over a dataset at the given mask threshold.
pub fn evaluate(
    model: &Model,
    cfg: &TrainConfig,
    ds: &Dataset,
    threshold: f32,
) -> Result<EvalReport> {
    if ds.samples.is_empty() {
        return Err(Error::Usage("cannot evaluate an empty dataset".into()));
    }
    let mut evals = Vec::with_capacity(ds.samples.len());
    for (i, sample) in ds.samples.iter().enumerate() {
        let prep = prepare_sample(sample, &cfg.head, 1.0, cfg.boundary_thickness);
        let cs = cfg.head.crop_size();
        let mut g = Graph::new();
        let mut bind = Binding::default();
        let crop = g.constant(prep.crop, &[cs, cs, 3]);
        let out = model.forward_crop(&mut g, &mut bind, crop, ForwardMode::Infer, false)?;
        if i == 0 {
            check_adjacency(model, cfg, ds)?;
        }
        let mask_logits = g.data(out.occludee_mask);
        let boundary_logits = g.data(out.occludee_boundary);
        let pred = predict_mask(None, None, boundary_logits, mask_logits, threshold);
        let gt_mask: Vec<bool> = prep.gt.occludee_mask.iter().map(|&v| v > 0.5).collect();
        let gt_boundary: Vec<bool> = prep.gt.occludee_boundary.iter().map(|&v| v > 0.5).collect();
        let iou = mask_iou(&pred.occludee_mask, &gt_mask);
        let boundary_f = boundary_f1(&pred.occludee_boundary, &gt_boundary);
        // confidence: mean sigmoid over the predicted mask region
        let (mut conf, mut cnt) = (0.0f32, 0usize);
        for (z, &p) in mask_logits.iter().zip(&pred.occludee_mask) {
            if p {
                conf += sigmoid_scalar(*z);
                cnt += 1;
            }
        }
        let score = if cnt == 0 { 0.0 } else { conf / cnt as f32 };
        evals.push(SampleEval {
            iou,
            boundary_f,
            score,
            occluded: sample.overlap_ratio >= OCCLUDED_SPLIT_MIN_OVERLAP,
        });
    }
    let all: Vec<&SampleEval> = evals.iter().collect();
    let occ: Vec<&SampleEval> = evals.iter().filter(|e| e.occluded).collect();
    let non: Vec<&SampleEval> = evals.iter().filter(|e| !e.occluded).collect();
    let report = EvalReport {
        overall: split_metrics(&all),
        occluded: split_metrics(&occ),
        non_occluded: split_metrics(&non),
        loss_curve: None,
    };
    for m in [&report.overall, &report.occluded, &report.non_occluded] {
        debug_assert!(m.ap50 >= m.ap - 1e-6, "AP50 {} below AP {}", m.ap50, m.ap);
    }
    Ok(report)
}

/// Row-stochasticity of every graph adjacency in the model, checked on the
/// first evaluation sample.
fn check_adjacency(model: &Model, cfg: &TrainConfig, ds: &Dataset) -> Result<()> {
    if cfg.variant.op() != BlockOp::Gcn {
        return Ok(());
    }
    let prep = prepare_sample(&ds.samples[0], &cfg.head, 1.0, cfg.boundary_thickness);
    let cs = cfg.head.crop_size();
    let mut g = Graph::new();
    let mut bind = Binding::default();
    let crop = g.constant(prep.crop, &[cs, cs, 3]);
    let x_roi = model.stem(&mut g, &mut bind, crop, false)?;
    let flat = g.flatten_spatial(x_roi)?;
    let prefixes: &[&str] = if cfg.variant.bilayer() {
        &["occluder.gcn", "occludee.gcn"]
    } else {
        &["occludee.gcn"]
    };
    for prefix in prefixes {
        let block = crate::gcn::NonLocalBlock {
            prefix: prefix.to_string(),
            channels: cfg.head.channels,
            k_half: (cfg.head.channels / 2).max(1),
        };
        let a = block.build_adjacency(&mut g, &model.store, &mut bind, flat, false)?;
        Adjacency::from_graph(&g, a).validate()?;
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct AblationRow {
    pub label: String,
    pub report: EvalReport,
}

/// Train each configuration on the same dataset and seed, then evaluate all
/// on the same test set.
pub fn run_ablation(
    configs: &[(String, TrainConfig)],
    train_ds: &Dataset,
    test_ds: &Dataset,
    mut progress: impl FnMut(&str, &crate::train::TraceRow),
) -> Result<Vec<AblationRow>> {
    let mut rows = Vec::new();
    for (label, cfg) in configs {
        let mut trainer = Trainer::new(cfg.clone())?;
        let trace = trainer.train(train_ds, None, |row| progress(label, row))?;
        let mut report = evaluate(&trainer.model, cfg, test_ds, 0.5)?;
        if !trace.is_empty() {
            report.loss_curve = Some(LossCurveSummary {
                first: trace.first().unwrap().total,
                last: trace.last().unwrap().total,
                min: trace.iter().map(|r| r.total).fold(f32::INFINITY, f32::min),
            });
        }
        rows.push(AblationRow {
            label: label.clone(),
            report,
        });
    }
    Ok(rows)
}

/// Aligned text table of ablation results.
pub fn format_ablation_table(rows: &[AblationRow]) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "{:<24} {:>8} {:>8} {:>8} {:>8} {:>10} {:>10}\n",
        "variant", "IoU", "IoU-occ", "AP", "AP50", "AP-occ", "AP50-occ"
    ));
    for r in rows {
        out.push_str(&format!(
            "{:<24} {:>8.4} {:>8.4} {:>8.4} {:>8.4} {:>10.4} {:>10.4}\n",
            r.label,
            r.report.overall.mean_iou,
            r.report.occluded.mean_iou,
            r.report.overall.ap,
            r.report.overall.ap50,
            r.report.occluded.ap,
            r.report.occluded.ap50,
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn iou_and_boundary_edge_cases() {
        let a = vec![true, true, false, false];
        assert_eq!(mask_iou(&a, &a), 1.0);
        let empty = vec![false; 4];
        assert_eq!(mask_iou(&empty, &a), 0.0);
        assert_eq!(mask_iou(&empty, &empty), 1.0);
        assert_eq!(boundary_f1(&a, &a), 1.0);
        assert_eq!(boundary_f1(&empty, &a), 0.0);
    }

    #[test]
    fn perfect_predictions_give_unit_ap() {
        let evals: Vec<SampleEval> = (0..5)
            .map(|i| SampleEval {
                iou: 1.0,
                boundary_f: 1.0,
                score: 0.9 - i as f32 * 0.1,
                occluded: false,
            })
            .collect();
        let refs: Vec<&SampleEval> = evals.iter().collect();
        let m = split_metrics(&refs);
        assert_eq!(m.ap, 1.0);
        assert_eq!(m.ap50, 1.0);
        assert_eq!(m.mean_iou, 1.0);
    }

    #[test]
    fn empty_predictions_give_zero_ap() {
        let evals: Vec<SampleEval> = (0..5)
            .map(|_| SampleEval {
                iou: 0.0,
                boundary_f: 0.0,
                score: 0.0,
                occluded: false,
            })
            .collect();
        let refs: Vec<&SampleEval> = evals.iter().collect();
        let m = split_metrics(&refs);
        assert_eq!(m.ap, 0.0);
        assert_eq!(m.ap50, 0.0);
    }

    #[test]
    fn ap_matches_brute_force_pr_oracle() {
        // 5-sample ranked toy case: hits at ranks 1, 2, 4 (by score order)
        let scored = vec![
            (0.9, true),
            (0.8, true),
            (0.7, false),
            (0.6, true),
            (0.5, false),
        ];
        // oracle: walk the ranked list, area under the interpolated PR curve
        // recalls 1/5, 2/5, 3/5 reached at precisions 1, 1, 3/4
        let expect = (1.0f32 / 5.0) * 1.0 + (1.0 / 5.0) * 1.0 + (1.0 / 5.0) * 0.75;
        let got = average_precision(scored);
        assert!((got - expect).abs() < 1e-6, "{got} vs {expect}");
    }

    #[test]
    fn ap50_at_least_mean_ap() {
        let evals: Vec<SampleEval> = (0..10)
            .map(|i| SampleEval {
                iou: 0.4 + 0.05 * i as f32,
                boundary_f: 0.5,
                score: (i as f32 * 37.0) % 1.0,
                occluded: i % 2 == 0,
            })
            .collect();
        let refs: Vec<&SampleEval> = evals.iter().collect();
        let m = split_metrics(&refs);
        assert!(m.ap50 >= m.ap - 1e-6);
        for v in [m.mean_iou, m.mean_boundary_f, m.ap, m.ap50] {
            assert!((0.0..=1.0).contains(&v));
        }
    }

    #[test]
    fn empty_dataset_is_usage_error() {
        use crate::synth::SceneConfig;
        let cfg = TrainConfig {
            iterations: 10,
            warmup_iters: 1,
            head: crate::head::HeadConfig {
                roi: 7,
                channels: 4,
            },
            ..TrainConfig::default()
        };
        let trainer = Trainer::new(cfg.clone()).unwrap();
        let ds = Dataset {
            samples: vec![],
            config: SceneConfig::default(),
        };
        assert!(evaluate(&trainer.model, &cfg, &ds, 0.5).is_err());
    }
}
