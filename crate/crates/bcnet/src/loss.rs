//! Boundary/mask binary cross-entropy terms for both layers and the weighted
//! multi-task objective, plus ground-truth boundary derivation from masks.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::head::HeadOutput;
use crate::tensor::{Graph, TensorId};

/// Multi-task loss weights. `l1` belongs to the detection term, which this
/// artifact does not train; it is carried for completeness and applied to
/// nothing.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct LossWeights {
    pub l1: f32,
    pub l2: f32,
    pub l3: f32,
    pub l4: f32,
    pub l5: f32,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            l1: 1.0,
            l2: 0.5,
            l3: 0.25,
            l4: 0.5,
            l5: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) {
        for v in [self.l1, self.l2, self.l3, self.l4, self.l5] {
            assert!(v.is_finite() && v >= 0.0, "loss weights must be finite and non-negative");
        }
    }
}

/// Binary supervision maps at head output resolution, stored as 0/1 floats.
#[derive(Debug, Clone)]
pub struct GroundTruthMaps {
    pub size: usize,
    pub occluder_mask: Vec<f32>,
    pub occluder_boundary: Vec<f32>,
    pub occludee_mask: Vec<f32>,
    pub occludee_boundary: Vec<f32>,
}

impl GroundTruthMaps {
    pub fn from_bool(
        size: usize,
        occluder_mask: &[bool],
        occludee_mask: &[bool],
        boundary_thickness: usize,
    ) -> Self {
        let to_f = |m: &[bool]| m.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect::<Vec<f32>>();
        let ob = boundary_from_mask_thick(occluder_mask, size, size, boundary_thickness);
        let eb = boundary_from_mask_thick(occludee_mask, size, size, boundary_thickness);
        GroundTruthMaps {
            size,
            occluder_mask: to_f(occluder_mask),
            occluder_boundary: to_f(&ob),
            occludee_mask: to_f(occludee_mask),
            occludee_boundary: to_f(&eb),
        }
    }
}

/// 3x3 erosion with the border treated as background.
fn erode(mask: &[bool], w: usize, h: usize) -> Vec<bool> {
    let mut out = vec![false; w * h];
    for y in 0..h {
        for x in 0..w {
            if !mask[y * w + x] {
                continue;
            }
            let mut keep = true;
            'n: for dy in -1i32..=1 {
                for dx in -1i32..=1 {
                    let (ny, nx) = (y as i32 + dy, x as i32 + dx);
                    if ny < 0 || nx < 0 || ny >= h as i32 || nx >= w as i32 {
                        keep = false;
                        break 'n;
                    }
                    if !mask[ny as usize * w + nx as usize] {
                        keep = false;
                        break 'n;
                    }
                }
            }
            out[y * w + x] = keep;
        }
    }
    out
}

/// 1-pixel inner contour: mask minus its 3x3 erosion.
pub fn boundary_from_mask(mask: &[bool], w: usize, h: usize) -> Vec<bool> {
    boundary_from_mask_thick(mask, w, h, 1)
}

/// Inner contour of configurable thickness (iterated erosion).
pub fn boundary_from_mask_thick(mask: &[bool], w: usize, h: usize, thickness: usize) -> Vec<bool> {
    let mut core = mask.to_vec();
    for _ in 0..thickness {
        core = erode(&core, w, h);
    }
    mask.iter()
        .zip(&core)
        .map(|(&m, &c)| m && !c)
        .collect()
}

/// Mean BCE of a logit map against a 0/1 target, recorded on the graph.
pub fn bce_map_loss(g: &mut Graph, logits: TensorId, target: &[f32], shape: &[usize]) -> Result<TensorId> {
    let t = g.constant(target.to_vec(), shape);
    g.bce_mean(logits, t)
}

/// Scalar combination rule shared by the graph path and reporting:
/// l2*occluder_boundary + l3*occluder_mask + l4*occludee_boundary +
/// l5*occludee_mask. The detection term is out of scope and contributes 0.
pub fn combine_components(w: &LossWeights, ob: f32, om: f32, eb: f32, em: f32) -> f32 {
    w.l2 * ob + w.l3 * om + w.l4 * eb + w.l5 * em
}

/// Per-component BCE values of one forward pass.
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f32,
    pub occluder_boundary: f32,
    pub occluder_mask: f32,
    pub occludee_boundary: f32,
    pub occludee_mask: f32,
}

/// Occluder-layer loss: l2 * bce(boundary) + l3 * bce(mask).
pub fn occluder_loss(
    g: &mut Graph,
    boundary: TensorId,
    mask: TensorId,
    gt: &GroundTruthMaps,
    w: &LossWeights,
) -> Result<(TensorId, f32, f32)> {
    let shape = g.shape(boundary).to_vec();
    let lb = bce_map_loss(g, boundary, &gt.occluder_boundary, &shape)?;
    let lm = bce_map_loss(g, mask, &gt.occluder_mask, &shape)?;
    let (vb, vm) = (g.data(lb)[0], g.data(lm)[0]);
    let sb = g.scale(lb, w.l2);
    let sm = g.scale(lm, w.l3);
    let sum = g.add(sb, sm)?;
    Ok((sum, vb, vm))
}

/// Occludee-layer loss: l4 * bce(boundary) + l5 * bce(mask).
pub fn occludee_loss(
    g: &mut Graph,
    boundary: TensorId,
    mask: TensorId,
    gt: &GroundTruthMaps,
    w: &LossWeights,
) -> Result<(TensorId, f32, f32)> {
    let shape = g.shape(boundary).to_vec();
    let lb = bce_map_loss(g, boundary, &gt.occludee_boundary, &shape)?;
    let lm = bce_map_loss(g, mask, &gt.occludee_mask, &shape)?;
    let (vb, vm) = (g.data(lb)[0], g.data(lm)[0]);
    let sb = g.scale(lb, w.l4);
    let sm = g.scale(lm, w.l5);
    let sum = g.add(sb, sm)?;
    Ok((sum, vb, vm))
}

/// Full objective over one head output. Occluder terms are dropped when the
/// head emits no occluder maps (single variants) or when their weights are
/// zero (occlusion-modeling ablation).
pub fn total_loss(
    g: &mut Graph,
    out: &HeadOutput,
    gt: &GroundTruthMaps,
    w: &LossWeights,
) -> Result<(TensorId, LossBreakdown)> {
    let mut breakdown = LossBreakdown::default();
    let (occludee_sum, eb, em) = occludee_loss(g, out.occludee_boundary, out.occludee_mask, gt, w)?;
    breakdown.occludee_boundary = eb;
    breakdown.occludee_mask = em;
    let total = match (out.occluder_boundary, out.occluder_mask) {
        (Some(b), Some(m)) => {
            let (occluder_sum, ob, om) = occluder_loss(g, b, m, gt, w)?;
            breakdown.occluder_boundary = ob;
            breakdown.occluder_mask = om;
            g.add(occluder_sum, occludee_sum)?
        }
        _ => occludee_sum,
    };
    breakdown.total = g.data(total)[0];
    Ok((total, breakdown))
}
