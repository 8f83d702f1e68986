//! Double-precision reference forward pass of the full model and loss.
//!
//! An independent straight-line reimplementation of the head used only for
//! verification: finite-difference gradient checks need function values with
//! far less rounding noise than the f32 engine can provide, and the f64 path
//! doubles as a whole-pipeline oracle for the f32 forward.

use crate::head::{BlockOp, HeadConfig, HeadVariant};
use crate::loss::{GroundTruthMaps, LossWeights};
use crate::params::ParamStore;

fn p64(store: &ParamStore, name: &str) -> Vec<f64> {
    store
        .by_name(name)
        .unwrap_or_else(|| panic!("missing parameter {name}"))
        .data
        .iter()
        .map(|&v| v as f64)
        .collect()
}

fn conv2d(
    x: &[f64],
    (h, w, cin): (usize, usize, usize),
    wk: &[f64],
    b: &[f64],
    k: usize,
    cout: usize,
    stride: usize,
    pad: usize,
) -> (Vec<f64>, (usize, usize, usize)) {
    let oh = (h + 2 * pad - k) / stride + 1;
    let ow = (w + 2 * pad - k) / stride + 1;
    let mut out = vec![0.0f64; oh * ow * cout];
    for oy in 0..oh {
        for ox in 0..ow {
            let o = (oy * ow + ox) * cout;
            out[o..o + cout].copy_from_slice(b);
            for ky in 0..k {
                let iy = (oy * stride + ky) as isize - pad as isize;
                if iy < 0 || iy >= h as isize {
                    continue;
                }
                for kx in 0..k {
                    let ix = (ox * stride + kx) as isize - pad as isize;
                    if ix < 0 || ix >= w as isize {
                        continue;
                    }
                    let xi = (iy as usize * w + ix as usize) * cin;
                    let wi = (ky * k + kx) * cin * cout;
                    for ci in 0..cin {
                        let xv = x[xi + ci];
                        for co in 0..cout {
                            out[o + co] += xv * wk[wi + ci * cout + co];
                        }
                    }
                }
            }
        }
    }
    (out, (oh, ow, cout))
}

/// FNV-style hash over every pre-nonlinearity sign in one forward pass.
/// Two evaluations with equal fingerprints lie on the same smooth piece of
/// the loss surface, so central differences between them are valid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Fingerprint(pub u64);

impl Fingerprint {
    fn new() -> Self {
        Fingerprint(0xcbf2_9ce4_8422_2325)
    }

    fn bit(&mut self, b: bool) {
        self.0 = (self.0 ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3);
    }
}

fn relu(x: &mut [f64], fp: &mut Fingerprint) {
    for v in x.iter_mut() {
        fp.bit(*v > 0.0);
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0f64; m * n];
    for i in 0..m {
        for p in 0..k {
            let av = a[i * k + p];
            for j in 0..n {
                out[i * n + j] += av * b[p * n + j];
            }
        }
    }
    out
}

fn layer_norm(x: &mut [f64], n: usize, k: usize, eps: f64) {
    for i in 0..n {
        let row = &mut x[i * k..(i + 1) * k];
        let mean = row.iter().sum::<f64>() / k as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / k as f64;
        let inv = 1.0 / (var + eps).sqrt();
        for v in row.iter_mut() {
            *v = (*v - mean) * inv;
        }
    }
}

fn softmax_rows(x: &mut [f64], n: usize, k: usize) {
    for i in 0..n {
        let row = &mut x[i * k..(i + 1) * k];
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
}

fn upsample2x(x: &[f64], (h, w, c): (usize, usize, usize)) -> (Vec<f64>, (usize, usize, usize)) {
    let taps = |len: usize| -> Vec<(usize, usize, f64)> {
        (0..2 * len)
            .map(|o| {
                let f = (o as f64 + 0.5) / 2.0 - 0.5;
                let fl = f.floor();
                let wt = f - fl;
                let i0 = (fl.max(0.0) as usize).min(len - 1);
                let i1 = ((fl + 1.0).max(0.0) as usize).min(len - 1);
                (i0, i1, wt)
            })
            .collect()
    };
    let (ty, tx) = (taps(h), taps(w));
    let mut out = vec![0.0f64; 4 * h * w * c];
    for oy in 0..2 * h {
        let (y0, y1, wy) = ty[oy];
        for ox in 0..2 * w {
            let (x0, x1, wx) = tx[ox];
            for ci in 0..c {
                let g = |yy: usize, xx: usize| x[(yy * w + xx) * c + ci];
                let top = g(y0, x0) * (1.0 - wx) + g(y0, x1) * wx;
                let bot = g(y1, x0) * (1.0 - wx) + g(y1, x1) * wx;
                out[(oy * 2 * w + ox) * c + ci] = top * (1.0 - wy) + bot * wy;
            }
        }
    }
    (out, (2 * h, 2 * w, c))
}

fn bce_mean(logits: &[f64], target: &[f32]) -> f64 {
    let mut sum = 0.0f64;
    for (&z, &t) in logits.iter().zip(target) {
        sum += z.max(0.0) - z * t as f64 + (-z.abs()).exp().ln_1p();
    }
    sum / logits.len() as f64
}

fn stem_forward(
    store: &ParamStore,
    cfg: &HeadConfig,
    crop: &[f32],
    fp: &mut Fingerprint,
) -> (Vec<f64>, (usize, usize, usize)) {
    let cs = cfg.crop_size();
    let k = cfg.channels;
    let x: Vec<f64> = crop.iter().map(|&v| v as f64).collect();
    let w1 = p64(store, "stem.conv1.w");
    let b1 = p64(store, "stem.conv1.b");
    let (mut c1, d1) = conv2d(&x, (cs, cs, 3), &w1, &b1, 3, k, 1, 1);
    relu(&mut c1, fp);
    let w2 = p64(store, "stem.conv2.w");
    let b2 = p64(store, "stem.conv2.b");
    let (mut x_roi, dims) = conv2d(&c1, d1, &w2, &b2, 3, k, 2, 1);
    relu(&mut x_roi, fp);
    (x_roi, dims)
}

struct Branch<'a> {
    store: &'a ParamStore,
    prefix: &'a str,
    op: BlockOp,
    k: usize,
}

impl Branch<'_> {
    fn conv(
        &self,
        name: &str,
        x: &[f64],
        dims: (usize, usize, usize),
        ks: usize,
        cout: usize,
        pad: usize,
    ) -> (Vec<f64>, (usize, usize, usize)) {
        let w = p64(self.store, &format!("{}.{name}.w", self.prefix));
        let b = p64(self.store, &format!("{}.{name}.b", self.prefix));
        conv2d(x, dims, &w, &b, ks, cout, 1, pad)
    }

    /// Block output Z from an H×W×K feature (the fusion source on the
    /// occluder branch).
    fn block(&self, x: &[f64], dims: (usize, usize, usize), fp: &mut Fingerprint) -> Vec<f64> {
        let (mut pre, _) = self.conv("pre", x, dims, 3, self.k, 1);
        relu(&mut pre, fp);
        let n = dims.0 * dims.1;
        match self.op {
            BlockOp::Gcn => {
                let kh = (self.k / 2).max(1);
                let theta = p64(self.store, &format!("{}.gcn.theta.w", self.prefix));
                let phi = p64(self.store, &format!("{}.gcn.phi.w", self.prefix));
                let wg = p64(self.store, &format!("{}.gcn.wg", self.prefix));
                let xt = matmul(&pre, &theta, n, self.k, kh);
                let xp = matmul(&pre, &phi, n, self.k, kh);
                // A = softmax_rows((X theta)(X phi)^T)
                let mut a = vec![0.0f64; n * n];
                for i in 0..n {
                    for j in 0..n {
                        let mut s = 0.0;
                        for p in 0..kh {
                            s += xt[i * kh + p] * xp[j * kh + p];
                        }
                        a[i * n + j] = s;
                    }
                }
                softmax_rows(&mut a, n, n);
                let ax = matmul(&a, &pre, n, n, self.k);
                let mut z = matmul(&ax, &wg, n, self.k, self.k);
                layer_norm(&mut z, n, self.k, crate::LN_EPS as f64);
                relu(&mut z, fp);
                for (zv, pv) in z.iter_mut().zip(&pre) {
                    *zv += pv;
                }
                z
            }
            BlockOp::Fcn => {
                let (mut c, _) = self.conv("fcnop", &pre, dims, 3, self.k, 1);
                layer_norm(&mut c, n, self.k, crate::LN_EPS as f64);
                relu(&mut c, fp);
                for (cv, pv) in c.iter_mut().zip(&pre) {
                    *cv += pv;
                }
                c
            }
        }
    }

    fn refine(&self, z: &[f64], dims: (usize, usize, usize), fp: &mut Fingerprint) -> Vec<f64> {
        let (mut f1, d1) = self.conv("fcn1", z, dims, 3, self.k, 1);
        relu(&mut f1, fp);
        let (mut f2, _) = self.conv("fcn2", &f1, d1, 3, self.k, 1);
        relu(&mut f2, fp);
        f2
    }

    fn predict(&self, f: &[f64], dims: (usize, usize, usize)) -> (Vec<f64>, Vec<f64>) {
        let (up, du) = upsample2x(f, dims);
        let (boundary, _) = self.conv("boundary", &up, du, 1, 1, 0);
        let (mask, _) = self.conv("mask", &up, du, 1, 1, 0);
        (boundary, mask)
    }
}

/// The four logit maps of one forward pass in f64 (occluder maps empty on
/// single variants).
pub struct ReferenceOutput {
    pub occluder_boundary: Vec<f64>,
    pub occluder_mask: Vec<f64>,
    pub occludee_boundary: Vec<f64>,
    pub occludee_mask: Vec<f64>,
}

/// Full stem + head forward over an image crop, all arithmetic in f64.
pub fn forward_crop(
    store: &ParamStore,
    cfg: &HeadConfig,
    variant: HeadVariant,
    crop: &[f32],
) -> ReferenceOutput {
    forward_crop_probed(store, cfg, variant, crop).0
}

/// Forward pass plus the activation-sign fingerprint of the evaluation.
pub fn forward_crop_probed(
    store: &ParamStore,
    cfg: &HeadConfig,
    variant: HeadVariant,
    crop: &[f32],
) -> (ReferenceOutput, Fingerprint) {
    let mut fp = Fingerprint::new();
    let k = cfg.channels;
    let (x_roi, dims) = stem_forward(store, cfg, crop, &mut fp);
    let n = dims.0 * dims.1;

    let occludee = Branch {
        store,
        prefix: "occludee",
        op: variant.op(),
        k,
    };
    let (x_f, occ_b, occ_m) = if variant.bilayer() {
        let occluder = Branch {
            store,
            prefix: "occluder",
            op: variant.op(),
            k,
        };
        let z0 = occluder.block(&x_roi, dims, &mut fp);
        let f_occ = occluder.refine(&z0, dims, &mut fp);
        let (ob, om) = occluder.predict(&f_occ, dims);
        let wf = p64(store, "fuse.w");
        let mut x_f = matmul(&z0, &wf, n, k, k);
        for (fv, rv) in x_f.iter_mut().zip(&x_roi) {
            *fv += rv;
        }
        (x_f, ob, om)
    } else {
        (x_roi, Vec::new(), Vec::new())
    };
    let z1 = occludee.block(&x_f, dims, &mut fp);
    let f = occludee.refine(&z1, dims, &mut fp);
    let (eb, em) = occludee.predict(&f, dims);
    for map in [&occ_b, &occ_m, &eb, &em] {
        for &z in map.iter() {
            fp.bit(z > 0.0);
        }
    }
    (
        ReferenceOutput {
            occluder_boundary: occ_b,
            occluder_mask: occ_m,
            occludee_boundary: eb,
            occludee_mask: em,
        },
        fp,
    )
}

/// Total training loss of one crop in f64, mirroring `loss::total_loss`.
pub fn total_loss(
    store: &ParamStore,
    cfg: &HeadConfig,
    variant: HeadVariant,
    crop: &[f32],
    gt: &GroundTruthMaps,
    w: &LossWeights,
) -> f64 {
    total_loss_probed(store, cfg, variant, crop, gt, w).0
}

/// Loss plus the activation fingerprint: finite-difference probes compare
/// fingerprints at the two perturbed points and discard kink crossings.
pub fn total_loss_probed(
    store: &ParamStore,
    cfg: &HeadConfig,
    variant: HeadVariant,
    crop: &[f32],
    gt: &GroundTruthMaps,
    w: &LossWeights,
) -> (f64, Fingerprint) {
    let (out, fp) = forward_crop_probed(store, cfg, variant, crop);
    let mut total = w.l4 as f64 * bce_mean(&out.occludee_boundary, &gt.occludee_boundary)
        + w.l5 as f64 * bce_mean(&out.occludee_mask, &gt.occludee_mask);
    if variant.bilayer() {
        total += w.l2 as f64 * bce_mean(&out.occluder_boundary, &gt.occluder_boundary)
            + w.l3 as f64 * bce_mean(&out.occluder_mask, &gt.occluder_mask);
    }
    (total, fp)
}
