//! The bilayer occluder/occludee mask head.
//!
//! Occluder branch (3x3 pre-conv, graph or conv block, two-conv FCN) feeds
//! the occlusion-aware fusion `X_f = Z0 Wf + X_roi`; the occludee branch has
//! the same structure and predicts the target object from the fused feature.
//! Each branch ends in a 2x upsample and two 1x1 predictors emitting
//! single-channel boundary and mask logits.
//!
//! A small trainable convolutional stem maps fixed-size image crops to the
//! ROI feature, standing in for a detector backbone with RoIAlign.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::gcn::NonLocalBlock;
use crate::params::{kaiming_uniform, Binding, ParamStore};
use crate::tensor::{sigmoid_scalar, Graph, TensorId};

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct HeadConfig {
    /// ROI feature spatial size (the head sees roi x roi x channels).
    pub roi: usize,
    /// Feature channels K.
    pub channels: usize,
}

impl Default for HeadConfig {
    fn default() -> Self {
        HeadConfig {
            roi: 14,
            channels: 256,
        }
    }
}

impl HeadConfig {
    /// Output resolution of the prediction maps (one 2x upsample stage).
    pub fn out_size(&self) -> usize {
        2 * self.roi
    }

    /// Image crop resolution expected by the stem.
    pub fn crop_size(&self) -> usize {
        2 * self.roi
    }
}

/// Spatial operator inside a branch: non-local graph block or a plain conv
/// block of the same shape contract.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BlockOp {
    Gcn,
    Fcn,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum HeadVariant {
    BilayerGcn,
    BilayerFcn,
    SingleGcn,
    SingleFcn,
}

impl HeadVariant {
    pub fn bilayer(&self) -> bool {
        matches!(self, HeadVariant::BilayerGcn | HeadVariant::BilayerFcn)
    }

    pub fn op(&self) -> BlockOp {
        match self {
            HeadVariant::BilayerGcn | HeadVariant::SingleGcn => BlockOp::Gcn,
            HeadVariant::BilayerFcn | HeadVariant::SingleFcn => BlockOp::Fcn,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            HeadVariant::BilayerGcn => "bilayer-gcn",
            HeadVariant::BilayerFcn => "bilayer-fcn",
            HeadVariant::SingleGcn => "single-gcn",
            HeadVariant::SingleFcn => "single-fcn",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "bilayer-gcn" => Some(HeadVariant::BilayerGcn),
            "bilayer-fcn" => Some(HeadVariant::BilayerFcn),
            "single-gcn" => Some(HeadVariant::SingleGcn),
            "single-fcn" => Some(HeadVariant::SingleFcn),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ForwardMode {
    Train,
    /// Occluder prediction heads skipped; only the fused path runs.
    Infer,
    /// Like Train: occluder heads computed for visualization.
    Viz,
}

/// One branch: 3x3 pre-conv, spatial block, two-conv FCN, upsample, and the
/// 1x1 boundary/mask predictors.
#[derive(Debug, Clone)]
pub struct BranchParams {
    prefix: String,
    op: BlockOp,
    gcn: Option<NonLocalBlock>,
    channels: usize,
}

impl BranchParams {
    fn init(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        prefix: &str,
        op: BlockOp,
        k: usize,
    ) -> Self {
        let conv = |store: &mut ParamStore, rng: &mut ChaCha8Rng, name: String, ks: usize, cin: usize, cout: usize| {
            store.add(
                &format!("{name}.w"),
                kaiming_uniform(rng, &[ks, ks, cin, cout]),
                &[ks, ks, cin, cout],
            );
            store.add(&format!("{name}.b"), vec![0.0; cout], &[cout]);
        };
        conv(store, rng, format!("{prefix}.pre"), 3, k, k);
        let gcn = match op {
            BlockOp::Gcn => Some(NonLocalBlock::init(
                store,
                rng,
                &format!("{prefix}.gcn"),
                k,
            )),
            BlockOp::Fcn => {
                conv(store, rng, format!("{prefix}.fcnop"), 3, k, k);
                None
            }
        };
        conv(store, rng, format!("{prefix}.fcn1"), 3, k, k);
        conv(store, rng, format!("{prefix}.fcn2"), 3, k, k);
        conv(store, rng, format!("{prefix}.boundary"), 1, k, 1);
        conv(store, rng, format!("{prefix}.mask"), 1, k, 1);
        BranchParams {
            prefix: prefix.to_string(),
            op,
            gcn,
            channels: k,
        }
    }

    fn conv(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        bind: &mut Binding,
        name: &str,
        x: TensorId,
        trainable: bool,
        pad: usize,
    ) -> Result<TensorId> {
        let w = bind.bind(g, store, &format!("{}.{name}.w", self.prefix), trainable);
        let b = bind.bind(g, store, &format!("{}.{name}.b", self.prefix), trainable);
        g.conv2d(x, w, b, 1, pad)
    }

    /// Block output Z (the fusion source) from an H×W×K feature map.
    fn block(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        bind: &mut Binding,
        x: TensorId,
        trainable: bool,
    ) -> Result<TensorId> {
        let pre = self.conv(g, store, bind, "pre", x, trainable, 1)?;
        let pre = g.relu(pre);
        let shape = g.shape(pre).to_vec();
        match self.op {
            BlockOp::Gcn => {
                let flat = g.flatten_spatial(pre)?;
                let z = self.gcn.as_ref().unwrap().forward(g, store, bind, flat, trainable)?;
                g.reshape(z, &shape)
            }
            BlockOp::Fcn => {
                // conv analogue of the graph block: ReLU(LN(conv3x3(x))) + x
                let c = self.conv(g, store, bind, "fcnop", pre, trainable, 1)?;
                let flat = g.flatten_spatial(c)?;
                let ln = g.layer_norm(flat, crate::LN_EPS)?;
                let act = g.relu(ln);
                let act = g.reshape(act, &shape)?;
                g.add(act, pre)
            }
        }
    }

    /// FCN refinement on the block output.
    fn refine(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        bind: &mut Binding,
        z: TensorId,
        trainable: bool,
    ) -> Result<TensorId> {
        let f1 = self.conv(g, store, bind, "fcn1", z, trainable, 1)?;
        let f1 = g.relu(f1);
        let f2 = self.conv(g, store, bind, "fcn2", f1, trainable, 1)?;
        Ok(g.relu(f2))
    }

    /// Boundary and mask logits from the refined feature.
    fn predict(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        bind: &mut Binding,
        f: TensorId,
        trainable: bool,
    ) -> Result<(TensorId, TensorId)> {
        let up = g.upsample2x(f)?;
        let boundary = self.conv(g, store, bind, "boundary", up, trainable, 0)?;
        let mask = self.conv(g, store, bind, "mask", up, trainable, 0)?;
        Ok((boundary, mask))
    }

    pub fn channels(&self) -> usize {
        self.channels
    }
}

/// Occluder-branch result: block output feeding the fusion, refined feature,
/// and the two prediction maps (absent in inference mode).
pub struct OccluderOut {
    pub z0: TensorId,
    pub f_occ: TensorId,
    pub boundary: Option<TensorId>,
    pub mask: Option<TensorId>,
}

/// The four single-channel logit maps at 2H×2W (occluder maps present only
/// on bilayer variants outside inference mode).
pub struct HeadOutput {
    pub occluder_boundary: Option<TensorId>,
    pub occluder_mask: Option<TensorId>,
    pub occludee_boundary: TensorId,
    pub occludee_mask: TensorId,
}

/// Full model: stem plus head, with all parameters in one store.
#[derive(Debug, Clone)]
pub struct Model {
    pub cfg: HeadConfig,
    pub variant: HeadVariant,
    pub store: ParamStore,
    occluder: Option<BranchParams>,
    occludee: BranchParams,
}

impl Model {
    pub fn init(cfg: HeadConfig, variant: HeadVariant, rng: &mut ChaCha8Rng) -> Self {
        let k = cfg.channels;
        let mut store = ParamStore::new();
        store.add(
            "stem.conv1.w",
            kaiming_uniform(rng, &[3, 3, 3, k]),
            &[3, 3, 3, k],
        );
        store.add("stem.conv1.b", vec![0.0; k], &[k]);
        store.add(
            "stem.conv2.w",
            kaiming_uniform(rng, &[3, 3, k, k]),
            &[3, 3, k, k],
        );
        store.add("stem.conv2.b", vec![0.0; k], &[k]);
        let occluder = if variant.bilayer() {
            let b = BranchParams::init(&mut store, rng, "occluder", variant.op(), k);
            store.add("fuse.w", kaiming_uniform(rng, &[k, k]), &[k, k]);
            Some(b)
        } else {
            None
        };
        let occludee = BranchParams::init(&mut store, rng, "occludee", variant.op(), k);
        Model {
            cfg,
            variant,
            store,
            occluder,
            occludee,
        }
    }

    /// Stem: crop (2H×2W×3) to ROI feature (H×W×K).
    pub fn stem(
        &self,
        g: &mut Graph,
        bind: &mut Binding,
        crop: TensorId,
        trainable: bool,
    ) -> Result<TensorId> {
        let w1 = bind.bind(g, &self.store, "stem.conv1.w", trainable);
        let b1 = bind.bind(g, &self.store, "stem.conv1.b", trainable);
        let c1 = g.conv2d(crop, w1, b1, 1, 1)?;
        let c1 = g.relu(c1);
        let w2 = bind.bind(g, &self.store, "stem.conv2.w", trainable);
        let b2 = bind.bind(g, &self.store, "stem.conv2.b", trainable);
        let c2 = g.conv2d(c1, w2, b2, 2, 1)?;
        Ok(g.relu(c2))
    }

    pub fn occluder_branch(
        &self,
        g: &mut Graph,
        bind: &mut Binding,
        x_roi: TensorId,
        mode: ForwardMode,
        trainable: bool,
    ) -> Result<OccluderOut> {
        let branch = self.occluder.as_ref().expect("single variant has no occluder branch");
        let z0 = branch.block(g, &self.store, bind, x_roi, trainable)?;
        let f_occ = branch.refine(g, &self.store, bind, z0, trainable)?;
        let (boundary, mask) = if mode == ForwardMode::Infer {
            (None, None)
        } else {
            let (b, m) = branch.predict(g, &self.store, bind, f_occ, trainable)?;
            (Some(b), Some(m))
        };
        Ok(OccluderOut {
            z0,
            f_occ,
            boundary,
            mask,
        })
    }

    /// Occlusion-aware fusion: X_f = Z0 Wf + X_roi (1x1 transform of the
    /// occluder block output added to the ROI feature).
    pub fn fuse(
        &self,
        g: &mut Graph,
        bind: &mut Binding,
        z0: TensorId,
        x_roi: TensorId,
        trainable: bool,
    ) -> Result<TensorId> {
        let shape = g.shape(x_roi).to_vec();
        let wf = bind.bind(g, &self.store, "fuse.w", trainable);
        let zf = g.flatten_spatial(z0)?;
        let t = g.matmul(zf, wf)?;
        let t = g.reshape(t, &shape)?;
        g.add(t, x_roi)
    }

    pub fn occludee_branch(
        &self,
        g: &mut Graph,
        bind: &mut Binding,
        x_f: TensorId,
        trainable: bool,
    ) -> Result<(TensorId, TensorId)> {
        let z1 = self.occludee.block(g, &self.store, bind, x_f, trainable)?;
        let f = self.occludee.refine(g, &self.store, bind, z1, trainable)?;
        self.occludee.predict(g, &self.store, bind, f, trainable)
    }

    /// Full head pass over an ROI feature.
    pub fn head_forward(
        &self,
        g: &mut Graph,
        bind: &mut Binding,
        x_roi: TensorId,
        mode: ForwardMode,
        trainable: bool,
    ) -> Result<HeadOutput> {
        let (x_f, occ_b, occ_m) = if self.variant.bilayer() {
            let occ = self.occluder_branch(g, bind, x_roi, mode, trainable)?;
            let x_f = self.fuse(g, bind, occ.z0, x_roi, trainable)?;
            (x_f, occ.boundary, occ.mask)
        } else {
            (x_roi, None, None)
        };
        let (boundary, mask) = self.occludee_branch(g, bind, x_f, trainable)?;
        Ok(HeadOutput {
            occluder_boundary: occ_b,
            occluder_mask: occ_m,
            occludee_boundary: boundary,
            occludee_mask: mask,
        })
    }

    /// Stem plus head over an image crop.
    pub fn forward_crop(
        &self,
        g: &mut Graph,
        bind: &mut Binding,
        crop: TensorId,
        mode: ForwardMode,
        trainable: bool,
    ) -> Result<HeadOutput> {
        let x_roi = self.stem(g, bind, crop, trainable)?;
        self.head_forward(g, bind, x_roi, mode, trainable)
    }
}

/// Binarized prediction maps derived from the head logits.
#[derive(Debug, Clone)]
pub struct MaskPrediction {
    pub occluder_mask: Option<Vec<bool>>,
    pub occluder_boundary: Option<Vec<bool>>,
    pub occludee_mask: Vec<bool>,
    pub occludee_boundary: Vec<bool>,
    /// AND of the two binarized boundary maps; empty (all false) when the
    /// occluder maps are absent.
    pub occlusion_boundary: Vec<bool>,
}

fn binarize(logits: &[f32], threshold: f32) -> Vec<bool> {
    logits
        .iter()
        .map(|&z| sigmoid_scalar(z) >= threshold)
        .collect()
}

/// Threshold sigmoid(logits); the occlusion boundary is the overlap of the
/// occluder and occludee boundary predictions.
pub fn predict_mask(
    occluder_boundary: Option<&[f32]>,
    occluder_mask: Option<&[f32]>,
    occludee_boundary: &[f32],
    occludee_mask: &[f32],
    threshold: f32,
) -> MaskPrediction {
    assert!(threshold > 0.0 && threshold < 1.0);
    let ob = occluder_boundary.map(|l| binarize(l, threshold));
    let om = occluder_mask.map(|l| binarize(l, threshold));
    let eb = binarize(occludee_boundary, threshold);
    let em = binarize(occludee_mask, threshold);
    let occlusion = match &ob {
        Some(ob) => ob.iter().zip(&eb).map(|(a, b)| *a && *b).collect(),
        None => vec![false; eb.len()],
    };
    MaskPrediction {
        occluder_mask: om,
        occluder_boundary: ob,
        occludee_mask: em,
        occludee_boundary: eb,
        occlusion_boundary: occlusion,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn small_cfg() -> HeadConfig {
        HeadConfig {
            roi: 7,
            channels: 8,
        }
    }

    fn rand_map(seed: u64, h: usize, w: usize, c: usize) -> Vec<f32> {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        (0..h * w * c).map(|_| r.gen_range(-1.0f32..1.0)).collect()
    }

    #[test]
    fn default_config_shapes() {
        let cfg = HeadConfig::default();
        assert_eq!(cfg.roi, 14);
        assert_eq!(cfg.channels, 256);
        assert_eq!(cfg.out_size(), 28);
        // shape chain checked at reduced width to keep the test fast
        let cfg = HeadConfig {
            roi: 14,
            channels: 8,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let model = Model::init(cfg, HeadVariant::BilayerGcn, &mut rng);
        let mut g = Graph::new();
        let mut bind = Binding::default();
        let x = g.constant(rand_map(1, 14, 14, 8), &[14, 14, 8]);
        let out = model
            .head_forward(&mut g, &mut bind, x, ForwardMode::Train, false)
            .unwrap();
        assert_eq!(g.shape(out.occludee_mask), &[28, 28, 1]);
        assert_eq!(g.shape(out.occludee_boundary), &[28, 28, 1]);
        assert_eq!(g.shape(out.occluder_mask.unwrap()), &[28, 28, 1]);
        assert_eq!(g.shape(out.occluder_boundary.unwrap()), &[28, 28, 1]);
    }

    #[test]
    fn zero_parameters_zero_logits() {
        let cfg = small_cfg();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut model = Model::init(cfg, HeadVariant::BilayerGcn, &mut rng);
        for i in 0..model.store.len() {
            model.store.get_mut(i).data.fill(0.0);
        }
        let mut g = Graph::new();
        let mut bind = Binding::default();
        let x = g.constant(rand_map(4, 7, 7, 8), &[7, 7, 8]);
        let out = model
            .head_forward(&mut g, &mut bind, x, ForwardMode::Train, false)
            .unwrap();
        for id in [
            out.occludee_mask,
            out.occludee_boundary,
            out.occluder_mask.unwrap(),
            out.occluder_boundary.unwrap(),
        ] {
            assert!(g.data(id).iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn forward_is_deterministic() {
        let cfg = small_cfg();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let model = Model::init(cfg, HeadVariant::BilayerGcn, &mut rng);
        let run = || {
            let mut g = Graph::new();
            let mut bind = Binding::default();
            let x = g.constant(rand_map(6, 7, 7, 8), &[7, 7, 8]);
            let out = model
                .head_forward(&mut g, &mut bind, x, ForwardMode::Train, false)
                .unwrap();
            g.data(out.occludee_mask).to_vec()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn train_and_infer_agree_on_occludee_logits() {
        let cfg = small_cfg();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let model = Model::init(cfg, HeadVariant::BilayerGcn, &mut rng);
        let xd = rand_map(8, 7, 7, 8);
        let fwd = |mode: ForwardMode| {
            let mut g = Graph::new();
            let mut bind = Binding::default();
            let x = g.constant(xd.clone(), &[7, 7, 8]);
            let out = model.head_forward(&mut g, &mut bind, x, mode, false).unwrap();
            (
                g.data(out.occludee_mask).to_vec(),
                out.occluder_mask.is_some(),
            )
        };
        let (train, has_train) = fwd(ForwardMode::Train);
        let (infer, has_infer) = fwd(ForwardMode::Infer);
        assert!(has_train && !has_infer);
        assert_eq!(train, infer);
    }

    #[test]
    fn fuse_zero_z0_passes_x_roi() {
        let cfg = small_cfg();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let model = Model::init(cfg, HeadVariant::BilayerGcn, &mut rng);
        let mut g = Graph::new();
        let mut bind = Binding::default();
        let xd = rand_map(10, 7, 7, 8);
        let x = g.constant(xd.clone(), &[7, 7, 8]);
        let z0 = g.constant(vec![0.0; 7 * 7 * 8], &[7, 7, 8]);
        let xf = model.fuse(&mut g, &mut bind, z0, x, false).unwrap();
        assert_eq!(g.data(xf), &xd[..]);
    }

    #[test]
    fn fuse_identity_transform_passes_z0() {
        let cfg = small_cfg();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut model = Model::init(cfg, HeadVariant::BilayerGcn, &mut rng);
        let k = cfg.channels;
        let wf = model.store.by_name_mut("fuse.w").unwrap();
        wf.data.fill(0.0);
        for i in 0..k {
            wf.data[i * k + i] = 1.0;
        }
        let mut g = Graph::new();
        let mut bind = Binding::default();
        let zd = rand_map(12, 7, 7, 8);
        let z0 = g.constant(zd.clone(), &[7, 7, 8]);
        let x = g.constant(vec![0.0; 7 * 7 * 8], &[7, 7, 8]);
        let xf = model.fuse(&mut g, &mut bind, z0, x, false).unwrap();
        assert_eq!(g.data(xf), &zd[..]);
    }

    #[test]
    fn fuse_matches_dense_oracle() {
        // independent 1x1-conv-plus-add oracle with plain loops
        let cfg = small_cfg();
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let model = Model::init(cfg, HeadVariant::BilayerGcn, &mut rng);
        let k = cfg.channels;
        let (h, w) = (7, 7);
        let zd = rand_map(14, h, w, k);
        let xd = rand_map(15, h, w, k);
        let wf = model.store.by_name("fuse.w").unwrap().data.clone();
        let mut want = vec![0.0f32; h * w * k];
        for p in 0..h * w {
            for co in 0..k {
                let mut acc = xd[p * k + co];
                for ci in 0..k {
                    acc += zd[p * k + ci] * wf[ci * k + co];
                }
                want[p * k + co] = acc;
            }
        }
        let mut g = Graph::new();
        let mut bind = Binding::default();
        let z0 = g.constant(zd, &[h, w, k]);
        let x = g.constant(xd, &[h, w, k]);
        let xf = model.fuse(&mut g, &mut bind, z0, x, false).unwrap();
        for (got, wv) in g.data(xf).iter().zip(&want) {
            assert!((got - wv).abs() < 1e-6);
        }
    }

    #[test]
    fn perturbing_x_roi_reaches_occludee_logits_through_fusion() {
        let cfg = small_cfg();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let model = Model::init(cfg, HeadVariant::BilayerGcn, &mut rng);
        let mut xd = rand_map(18, 7, 7, 8);
        let fwd = |xd: &[f32]| {
            let mut g = Graph::new();
            let mut bind = Binding::default();
            let x = g.constant(xd.to_vec(), &[7, 7, 8]);
            let out = model
                .head_forward(&mut g, &mut bind, x, ForwardMode::Infer, false)
                .unwrap();
            g.data(out.occludee_mask).to_vec()
        };
        let base = fwd(&xd);
        xd[0] += 1e-2;
        let bumped = fwd(&xd);
        let delta: f32 = base
            .iter()
            .zip(&bumped)
            .map(|(a, b)| (a - b).abs())
            .sum();
        assert!(delta > 1e-7, "fusion path carries no signal");
    }

    #[test]
    fn occludee_gradients_flow_into_occluder_branch() {
        let cfg = small_cfg();
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let model = Model::init(cfg, HeadVariant::BilayerGcn, &mut rng);
        let mut g = Graph::new();
        let mut bind = Binding::default();
        let x = g.constant(rand_map(20, 7, 7, 8), &[7, 7, 8]);
        let out = model
            .head_forward(&mut g, &mut bind, x, ForwardMode::Infer, true)
            .unwrap();
        let target = g.constant(vec![1.0; 14 * 14], &[14, 14, 1]);
        let loss = g.bce_mean(out.occludee_mask, target).unwrap();
        g.backward(loss).unwrap();
        let grads = bind.collect_grads(&g, &model.store);
        for name in ["occluder.gcn.theta.w", "occluder.gcn.phi.w", "occluder.gcn.wg"] {
            let i = model.store.index(name).unwrap();
            let norm: f32 = grads[i].iter().map(|v| v * v).sum();
            assert!(norm > 0.0, "{name} got no gradient from the occludee loss");
        }
    }

    #[test]
    fn outputs_finite_for_random_inputs() {
        let cfg = small_cfg();
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let model = Model::init(cfg, HeadVariant::BilayerGcn, &mut rng);
        for t in 0..50 {
            let mut g = Graph::new();
            let mut bind = Binding::default();
            let x = g.constant(rand_map(100 + t, 7, 7, 8), &[7, 7, 8]);
            let out = model
                .head_forward(&mut g, &mut bind, x, ForwardMode::Train, false)
                .unwrap();
            for id in [
                out.occludee_mask,
                out.occludee_boundary,
                out.occluder_mask.unwrap(),
                out.occluder_boundary.unwrap(),
            ] {
                assert!(g.data(id).iter().all(|v| v.is_finite()));
            }
        }
    }

    #[test]
    fn predict_mask_saturated_negative_is_empty() {
        let n = 16;
        let logits = vec![-100.0f32; n];
        let p = predict_mask(Some(&logits), Some(&logits), &logits, &logits, 0.5);
        assert!(p.occludee_mask.iter().all(|v| !v));
        assert!(p.occlusion_boundary.iter().all(|v| !v));
    }

    #[test]
    fn disjoint_boundaries_give_empty_occlusion_boundary() {
        let occluder_b = vec![10.0, -10.0, 10.0, -10.0];
        let occludee_b = vec![-10.0, 10.0, -10.0, 10.0];
        let m = vec![0.0f32; 4];
        let p = predict_mask(Some(&occluder_b), Some(&m), &occludee_b, &m, 0.5);
        assert!(p.occlusion_boundary.iter().all(|v| !v));
    }

    #[test]
    fn single_variant_has_no_gcn_or_occluder_params() {
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        let model = Model::init(small_cfg(), HeadVariant::SingleFcn, &mut rng);
        for (name, _) in model.store.iter() {
            assert!(!name.contains("gcn"), "unexpected {name}");
            assert!(!name.contains("occluder"), "unexpected {name}");
            assert!(!name.contains("fuse"), "unexpected {name}");
        }
    }
}
