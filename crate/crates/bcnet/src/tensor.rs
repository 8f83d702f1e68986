//! Dense f32 tensors with reverse-mode automatic differentiation.
//!
//! A [`Graph`] records every executed operation in topological order; tensors
//! are indices into the graph. Calling [`Graph::backward`] on a scalar node
//! replays the tape in reverse and accumulates gradients for every node with
//! `requires_grad` on the compute path. Gradients accumulate across repeated
//! backward calls until [`Graph::zero_grads`] is invoked.

use crate::error::{Error, Result};

pub type TensorId = usize;

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Matmul(TensorId, TensorId),
    /// a · bᵀ, used for pairwise similarity logits.
    MatmulNt(TensorId, TensorId),
    Conv2d {
        x: TensorId,
        w: TensorId,
        b: TensorId,
        stride: usize,
        pad: usize,
    },
    LayerNorm {
        x: TensorId,
        eps: f32,
    },
    SoftmaxRows(TensorId),
    Relu(TensorId),
    Sigmoid(TensorId),
    Add(TensorId, TensorId),
    Mul(TensorId, TensorId),
    Scale(TensorId, f32),
    Upsample2x(TensorId),
    Reshape(TensorId),
    Sum(TensorId),
    /// Mean binary cross-entropy on logits against a constant target.
    BceMean {
        logits: TensorId,
        target: TensorId,
    },
}

#[derive(Debug)]
struct Node {
    op: Op,
    shape: Vec<usize>,
    data: Vec<f32>,
    grad: Option<Vec<f32>>,
    requires_grad: bool,
}

/// Tape of executed operations; owns all tensor storage.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    fn push(&mut self, op: Op, shape: Vec<usize>, data: Vec<f32>, requires_grad: bool) -> TensorId {
        debug_assert_eq!(numel(&shape), data.len());
        self.nodes.push(Node {
            op,
            shape,
            data,
            grad: None,
            requires_grad,
        });
        self.nodes.len() - 1
    }

    /// Leaf tensor. `requires_grad` marks it as a trainable parameter.
    pub fn leaf(&mut self, data: Vec<f32>, shape: &[usize], requires_grad: bool) -> TensorId {
        assert_eq!(
            numel(shape),
            data.len(),
            "leaf data length {} does not match shape {:?}",
            data.len(),
            shape
        );
        self.push(Op::Leaf, shape.to_vec(), data, requires_grad)
    }

    pub fn constant(&mut self, data: Vec<f32>, shape: &[usize]) -> TensorId {
        self.leaf(data, shape, false)
    }

    pub fn shape(&self, t: TensorId) -> &[usize] {
        &self.nodes[t].shape
    }

    pub fn data(&self, t: TensorId) -> &[f32] {
        &self.nodes[t].data
    }

    pub fn grad(&self, t: TensorId) -> Option<&[f32]> {
        self.nodes[t].grad.as_deref()
    }

    pub fn requires_grad(&self, t: TensorId) -> bool {
        self.nodes[t].requires_grad
    }

    pub fn zero_grads(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    fn prop(&self, ids: &[TensorId]) -> bool {
        ids.iter().any(|&i| self.nodes[i].requires_grad)
    }

    // ---- operations ------------------------------------------------------

    pub fn matmul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::DimMismatch {
                op: "matmul",
                lhs: sa,
                rhs: sb,
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let out = matmul_raw(self.data(a), self.data(b), m, k, n);
        let rg = self.prop(&[a, b]);
        Ok(self.push(Op::Matmul(a, b), vec![m, n], out, rg))
    }

    /// a (M×K) times bᵀ where b is N×K, yielding M×N.
    pub fn matmul_nt(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[1] {
            return Err(Error::DimMismatch {
                op: "matmul_nt",
                lhs: sa,
                rhs: sb,
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[0]);
        let (da, db) = (self.data(a), self.data(b));
        let mut out = vec![0.0f32; m * n];
        for i in 0..m {
            let ra = &da[i * k..(i + 1) * k];
            for j in 0..n {
                let rb = &db[j * k..(j + 1) * k];
                out[i * n + j] = ra.iter().zip(rb).map(|(x, y)| x * y).sum();
            }
        }
        let rg = self.prop(&[a, b]);
        Ok(self.push(Op::MatmulNt(a, b), vec![m, n], out, rg))
    }

    /// 2-D cross-correlation over an H×W×Cin tensor with a k×k×Cin×Cout
    /// kernel and per-channel bias. Zero padding outside the grid.
    pub fn conv2d(
        &mut self,
        x: TensorId,
        w: TensorId,
        b: TensorId,
        stride: usize,
        pad: usize,
    ) -> Result<TensorId> {
        let (sx, sw) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        if sx.len() != 3 || sw.len() != 4 || sw[0] != sw[1] || sx[2] != sw[2] {
            return Err(Error::DimMismatch {
                op: "conv2d",
                lhs: sx,
                rhs: sw,
            });
        }
        let (h, wd, cin) = (sx[0], sx[1], sx[2]);
        let (k, cout) = (sw[0], sw[3]);
        if self.shape(b) != [cout] {
            return Err(Error::DimMismatch {
                op: "conv2d bias",
                lhs: self.shape(b).to_vec(),
                rhs: vec![cout],
            });
        }
        let oh = (h + 2 * pad - k) / stride + 1;
        let ow = (wd + 2 * pad - k) / stride + 1;
        let mut out = vec![0.0f32; oh * ow * cout];
        {
            let (dx, dw, db) = (self.data(x), self.data(w), self.data(b));
            for oy in 0..oh {
                for ox in 0..ow {
                    let o = (oy * ow + ox) * cout;
                    out[o..o + cout].copy_from_slice(db);
                    for ky in 0..k {
                        let iy = (oy * stride + ky) as isize - pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for kx in 0..k {
                            let ix = (ox * stride + kx) as isize - pad as isize;
                            if ix < 0 || ix >= wd as isize {
                                continue;
                            }
                            let xi = (iy as usize * wd + ix as usize) * cin;
                            let wi = (ky * k + kx) * cin * cout;
                            for ci in 0..cin {
                                let xv = dx[xi + ci];
                                if xv == 0.0 {
                                    continue;
                                }
                                let wrow = &dw[wi + ci * cout..wi + (ci + 1) * cout];
                                for (oo, ww) in out[o..o + cout].iter_mut().zip(wrow) {
                                    *oo += xv * ww;
                                }
                            }
                        }
                    }
                }
            }
        }
        let rg = self.prop(&[x, w, b]);
        Ok(self.push(
            Op::Conv2d {
                x,
                w,
                b,
                stride,
                pad,
            },
            vec![oh, ow, cout],
            out,
            rg,
        ))
    }

    /// Per-row normalization of an N×K tensor: (x - mean) / sqrt(var + eps).
    /// No learned affine.
    pub fn layer_norm(&mut self, x: TensorId, eps: f32) -> Result<TensorId> {
        let sx = self.shape(x).to_vec();
        if sx.len() != 2 {
            return Err(Error::DimMismatch {
                op: "layer_norm",
                lhs: sx,
                rhs: vec![],
            });
        }
        let (n, k) = (sx[0], sx[1]);
        let dx = self.data(x);
        let mut out = vec![0.0f32; n * k];
        for i in 0..n {
            let row = &dx[i * k..(i + 1) * k];
            let mean = row.iter().sum::<f32>() / k as f32;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f32>() / k as f32;
            let inv = 1.0 / (var + eps).sqrt();
            for j in 0..k {
                out[i * k + j] = (row[j] - mean) * inv;
            }
        }
        let rg = self.prop(&[x]);
        Ok(self.push(Op::LayerNorm { x, eps }, sx, out, rg))
    }

    /// Row-wise softmax with max subtraction.
    pub fn softmax_rows(&mut self, x: TensorId) -> Result<TensorId> {
        let sx = self.shape(x).to_vec();
        if sx.len() != 2 {
            return Err(Error::DimMismatch {
                op: "softmax_rows",
                lhs: sx,
                rhs: vec![],
            });
        }
        let dx = self.data(x);
        if dx.iter().any(|v| v.is_nan()) {
            return Err(Error::Numeric {
                op: "softmax_rows",
                msg: "NaN in input".into(),
            });
        }
        let (n, k) = (sx[0], sx[1]);
        let mut out = vec![0.0f32; n * k];
        for i in 0..n {
            let row = &dx[i * k..(i + 1) * k];
            let max = row.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
            let orow = &mut out[i * k..(i + 1) * k];
            let mut sum = 0.0f32;
            for j in 0..k {
                let e = (row[j] - max).exp();
                orow[j] = e;
                sum += e;
            }
            for v in orow.iter_mut() {
                *v /= sum;
            }
        }
        let rg = self.prop(&[x]);
        Ok(self.push(Op::SoftmaxRows(x), sx, out, rg))
    }

    pub fn relu(&mut self, x: TensorId) -> TensorId {
        let out: Vec<f32> = self.data(x).iter().map(|v| v.max(0.0)).collect();
        let (shape, rg) = (self.shape(x).to_vec(), self.prop(&[x]));
        self.push(Op::Relu(x), shape, out, rg)
    }

    pub fn sigmoid(&mut self, x: TensorId) -> TensorId {
        let out: Vec<f32> = self.data(x).iter().map(|v| sigmoid_scalar(*v)).collect();
        let (shape, rg) = (self.shape(x).to_vec(), self.prop(&[x]));
        self.push(Op::Sigmoid(x), shape, out, rg)
    }

    pub fn add(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::DimMismatch {
                op: "add",
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        let out: Vec<f32> = self
            .data(a)
            .iter()
            .zip(self.data(b))
            .map(|(x, y)| x + y)
            .collect();
        let (shape, rg) = (self.shape(a).to_vec(), self.prop(&[a, b]));
        Ok(self.push(Op::Add(a, b), shape, out, rg))
    }

    pub fn mul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::DimMismatch {
                op: "mul",
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        let out: Vec<f32> = self
            .data(a)
            .iter()
            .zip(self.data(b))
            .map(|(x, y)| x * y)
            .collect();
        let (shape, rg) = (self.shape(a).to_vec(), self.prop(&[a, b]));
        Ok(self.push(Op::Mul(a, b), shape, out, rg))
    }

    pub fn scale(&mut self, x: TensorId, c: f32) -> TensorId {
        let out: Vec<f32> = self.data(x).iter().map(|v| v * c).collect();
        let (shape, rg) = (self.shape(x).to_vec(), self.prop(&[x]));
        self.push(Op::Scale(x, c), shape, out, rg)
    }

    /// Bilinear 2x upsampling of an H×W×C map, align-corners-false.
    pub fn upsample2x(&mut self, x: TensorId) -> Result<TensorId> {
        let sx = self.shape(x).to_vec();
        if sx.len() != 3 {
            return Err(Error::DimMismatch {
                op: "upsample2x",
                lhs: sx,
                rhs: vec![],
            });
        }
        let (h, w, c) = (sx[0], sx[1], sx[2]);
        let (oh, ow) = (2 * h, 2 * w);
        let ty = upsample_taps(h);
        let tx = upsample_taps(w);
        let dx = self.data(x);
        let mut out = vec![0.0f32; oh * ow * c];
        for oy in 0..oh {
            let (y0, y1, wy) = ty[oy];
            for ox in 0..ow {
                let (x0, x1, wx) = tx[ox];
                let o = (oy * ow + ox) * c;
                let i00 = (y0 * w + x0) * c;
                let i01 = (y0 * w + x1) * c;
                let i10 = (y1 * w + x0) * c;
                let i11 = (y1 * w + x1) * c;
                for ci in 0..c {
                    out[o + ci] = (1.0 - wy) * ((1.0 - wx) * dx[i00 + ci] + wx * dx[i01 + ci])
                        + wy * ((1.0 - wx) * dx[i10 + ci] + wx * dx[i11 + ci]);
                }
            }
        }
        let rg = self.prop(&[x]);
        Ok(self.push(Op::Upsample2x(x), vec![oh, ow, c], out, rg))
    }

    /// View with a new shape; element count must match.
    pub fn reshape(&mut self, x: TensorId, shape: &[usize]) -> Result<TensorId> {
        if numel(shape) != self.data(x).len() {
            return Err(Error::DimMismatch {
                op: "reshape",
                lhs: self.shape(x).to_vec(),
                rhs: shape.to_vec(),
            });
        }
        let (out, rg) = (self.data(x).to_vec(), self.prop(&[x]));
        Ok(self.push(Op::Reshape(x), shape.to_vec(), out, rg))
    }

    /// H×W×K map viewed as an N×K node matrix, N = H·W.
    pub fn flatten_spatial(&mut self, x: TensorId) -> Result<TensorId> {
        let sx = self.shape(x).to_vec();
        if sx.len() != 3 {
            return Err(Error::DimMismatch {
                op: "flatten_spatial",
                lhs: sx,
                rhs: vec![],
            });
        }
        self.reshape(x, &[sx[0] * sx[1], sx[2]])
    }

    pub fn sum(&mut self, x: TensorId) -> TensorId {
        let s: f32 = self.data(x).iter().sum();
        let rg = self.prop(&[x]);
        self.push(Op::Sum(x), vec![1], vec![s], rg)
    }

    /// Mean BCE over all entries, computed in the stable logit form.
    /// The target carries no gradient.
    pub fn bce_mean(&mut self, logits: TensorId, target: TensorId) -> Result<TensorId> {
        if self.shape(logits) != self.shape(target) {
            return Err(Error::DimMismatch {
                op: "bce_mean",
                lhs: self.shape(logits).to_vec(),
                rhs: self.shape(target).to_vec(),
            });
        }
        let (dz, dt) = (self.data(logits), self.data(target));
        if dz.iter().any(|v| v.is_nan()) || dt.iter().any(|v| v.is_nan()) {
            return Err(Error::Numeric {
                op: "bce_mean",
                msg: "NaN in input".into(),
            });
        }
        let n = dz.len() as f32;
        let loss: f32 = dz
            .iter()
            .zip(dt)
            .map(|(&z, &t)| z.max(0.0) - z * t + (-z.abs()).exp().ln_1p())
            .sum::<f32>()
            / n;
        let rg = self.prop(&[logits]);
        Ok(self.push(Op::BceMean { logits, target }, vec![1], vec![loss], rg))
    }

    // ---- backward --------------------------------------------------------

    /// Reverse pass from a scalar loss. Gradients accumulate into any grads
    /// already present.
    pub fn backward(&mut self, loss: TensorId) -> Result<()> {
        if self.data(loss).len() != 1 {
            return Err(Error::Usage(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let n = self.nodes.len();
        let mut grads: Vec<Option<Vec<f32>>> = vec![None; n];
        grads[loss] = Some(vec![1.0]);
        for id in (0..=loss).rev() {
            let g = match grads[id].take() {
                Some(g) => g,
                None => continue,
            };
            if !self.nodes[id].requires_grad {
                continue;
            }
            self.backward_node(id, &g, &mut grads);
            if matches!(self.nodes[id].op, Op::Leaf) {
                let node = &mut self.nodes[id];
                match &mut node.grad {
                    Some(acc) => {
                        for (a, v) in acc.iter_mut().zip(&g) {
                            *a += v;
                        }
                    }
                    None => node.grad = Some(g),
                }
            } else if self.nodes[id].grad.is_none() {
                // intermediate grads kept for inspection
                self.nodes[id].grad = Some(g);
            } else if let Some(acc) = &mut self.nodes[id].grad {
                for (a, v) in acc.iter_mut().zip(&g) {
                    *a += v;
                }
            }
        }
        Ok(())
    }

    fn accum(grads: &mut [Option<Vec<f32>>], id: TensorId, len: usize, f: impl FnOnce(&mut [f32])) {
        let slot = grads[id].get_or_insert_with(|| vec![0.0; len]);
        f(slot);
    }

    fn backward_node(&self, id: TensorId, g: &[f32], grads: &mut [Option<Vec<f32>>]) {
        let op = self.nodes[id].op.clone();
        match op {
            Op::Leaf => {}
            Op::Matmul(a, b) => {
                let (m, k) = (self.shape(a)[0], self.shape(a)[1]);
                let n = self.shape(b)[1];
                if self.nodes[a].requires_grad {
                    // da = g · bᵀ
                    let db = self.data(b);
                    Self::accum(grads, a, m * k, |ga| {
                        for i in 0..m {
                            for j in 0..n {
                                let gv = g[i * n + j];
                                if gv == 0.0 {
                                    continue;
                                }
                                for p in 0..k {
                                    ga[i * k + p] += gv * db[p * n + j];
                                }
                            }
                        }
                    });
                }
                if self.nodes[b].requires_grad {
                    // db = aᵀ · g
                    let da = self.data(a);
                    Self::accum(grads, b, k * n, |gb| {
                        for i in 0..m {
                            for p in 0..k {
                                let av = da[i * k + p];
                                if av == 0.0 {
                                    continue;
                                }
                                for j in 0..n {
                                    gb[p * n + j] += av * g[i * n + j];
                                }
                            }
                        }
                    });
                }
            }
            Op::MatmulNt(a, b) => {
                let (m, k) = (self.shape(a)[0], self.shape(a)[1]);
                let n = self.shape(b)[0];
                if self.nodes[a].requires_grad {
                    // da = g · b
                    let db = self.data(b);
                    Self::accum(grads, a, m * k, |ga| {
                        for i in 0..m {
                            for j in 0..n {
                                let gv = g[i * n + j];
                                if gv == 0.0 {
                                    continue;
                                }
                                for p in 0..k {
                                    ga[i * k + p] += gv * db[j * k + p];
                                }
                            }
                        }
                    });
                }
                if self.nodes[b].requires_grad {
                    // db = gᵀ · a
                    let da = self.data(a);
                    Self::accum(grads, b, n * k, |gb| {
                        for i in 0..m {
                            for j in 0..n {
                                let gv = g[i * n + j];
                                if gv == 0.0 {
                                    continue;
                                }
                                for p in 0..k {
                                    gb[j * k + p] += gv * da[i * k + p];
                                }
                            }
                        }
                    });
                }
            }
            Op::Conv2d {
                x,
                w,
                b,
                stride,
                pad,
            } => {
                let sx = self.shape(x);
                let sw = self.shape(w);
                let (h, wd, cin) = (sx[0], sx[1], sx[2]);
                let (k, cout) = (sw[0], sw[3]);
                let so = self.shape(id);
                let (oh, ow) = (so[0], so[1]);
                if self.nodes[b].requires_grad {
                    Self::accum(grads, b, cout, |gb| {
                        for oy in 0..oh {
                            for ox in 0..ow {
                                let o = (oy * ow + ox) * cout;
                                for co in 0..cout {
                                    gb[co] += g[o + co];
                                }
                            }
                        }
                    });
                }
                let need_x = self.nodes[x].requires_grad;
                let need_w = self.nodes[w].requires_grad;
                if need_x || need_w {
                    let (dx, dw) = (self.data(x), self.data(w));
                    let mut gx = vec![0.0f32; if need_x { h * wd * cin } else { 0 }];
                    let mut gw = vec![0.0f32; if need_w { k * k * cin * cout } else { 0 }];
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let o = (oy * ow + ox) * cout;
                            let go = &g[o..o + cout];
                            for ky in 0..k {
                                let iy = (oy * stride + ky) as isize - pad as isize;
                                if iy < 0 || iy >= h as isize {
                                    continue;
                                }
                                for kx in 0..k {
                                    let ix = (ox * stride + kx) as isize - pad as isize;
                                    if ix < 0 || ix >= wd as isize {
                                        continue;
                                    }
                                    let xi = (iy as usize * wd + ix as usize) * cin;
                                    let wi = (ky * k + kx) * cin * cout;
                                    for ci in 0..cin {
                                        let wrow = &dw[wi + ci * cout..wi + (ci + 1) * cout];
                                        if need_x {
                                            gx[xi + ci] += go
                                                .iter()
                                                .zip(wrow)
                                                .map(|(gg, ww)| gg * ww)
                                                .sum::<f32>();
                                        }
                                        if need_w {
                                            let xv = dx[xi + ci];
                                            if xv != 0.0 {
                                                let grow = &mut gw
                                                    [wi + ci * cout..wi + (ci + 1) * cout];
                                                for (gg, go_v) in grow.iter_mut().zip(go) {
                                                    *gg += xv * go_v;
                                                }
                                            }
                                        }
                                    }
                                }
                            }
                        }
                    }
                    if need_x {
                        Self::accum(grads, x, h * wd * cin, |acc| {
                            for (a, v) in acc.iter_mut().zip(&gx) {
                                *a += v;
                            }
                        });
                    }
                    if need_w {
                        Self::accum(grads, w, k * k * cin * cout, |acc| {
                            for (a, v) in acc.iter_mut().zip(&gw) {
                                *a += v;
                            }
                        });
                    }
                }
            }
            Op::LayerNorm { x, eps } => {
                if !self.nodes[x].requires_grad {
                    return;
                }
                let sx = self.shape(x);
                let (n, k) = (sx[0], sx[1]);
                let dx = self.data(x);
                let dy = self.data(id);
                Self::accum(grads, x, n * k, |gx| {
                    for i in 0..n {
                        let row = &dx[i * k..(i + 1) * k];
                        let yrow = &dy[i * k..(i + 1) * k];
                        let grow = &g[i * k..(i + 1) * k];
                        let mean = row.iter().sum::<f32>() / k as f32;
                        let var =
                            row.iter().map(|v| (v - mean) * (v - mean)).sum::<f32>() / k as f32;
                        let inv = 1.0 / (var + eps).sqrt();
                        let gmean = grow.iter().sum::<f32>() / k as f32;
                        let gymean =
                            grow.iter().zip(yrow).map(|(a, b)| a * b).sum::<f32>() / k as f32;
                        for j in 0..k {
                            gx[i * k + j] += inv * (grow[j] - gmean - yrow[j] * gymean);
                        }
                    }
                });
            }
            Op::SoftmaxRows(x) => {
                if !self.nodes[x].requires_grad {
                    return;
                }
                let sx = self.shape(x);
                let (n, k) = (sx[0], sx[1]);
                let dy = self.data(id);
                Self::accum(grads, x, n * k, |gx| {
                    for i in 0..n {
                        let yrow = &dy[i * k..(i + 1) * k];
                        let grow = &g[i * k..(i + 1) * k];
                        let dot: f32 = yrow.iter().zip(grow).map(|(y, gg)| y * gg).sum();
                        for j in 0..k {
                            gx[i * k + j] += yrow[j] * (grow[j] - dot);
                        }
                    }
                });
            }
            Op::Relu(x) => {
                if !self.nodes[x].requires_grad {
                    return;
                }
                let dx = self.data(x);
                Self::accum(grads, x, dx.len(), |gx| {
                    for i in 0..dx.len() {
                        if dx[i] > 0.0 {
                            gx[i] += g[i];
                        }
                    }
                });
            }
            Op::Sigmoid(x) => {
                if !self.nodes[x].requires_grad {
                    return;
                }
                let dy = self.data(id);
                Self::accum(grads, x, dy.len(), |gx| {
                    for i in 0..dy.len() {
                        gx[i] += g[i] * dy[i] * (1.0 - dy[i]);
                    }
                });
            }
            Op::Add(a, b) => {
                for t in [a, b] {
                    if self.nodes[t].requires_grad {
                        Self::accum(grads, t, g.len(), |gt| {
                            for (a, v) in gt.iter_mut().zip(g) {
                                *a += v;
                            }
                        });
                    }
                }
            }
            Op::Mul(a, b) => {
                if self.nodes[a].requires_grad {
                    let db = self.data(b);
                    Self::accum(grads, a, g.len(), |ga| {
                        for i in 0..g.len() {
                            ga[i] += g[i] * db[i];
                        }
                    });
                }
                if self.nodes[b].requires_grad {
                    let da = self.data(a);
                    Self::accum(grads, b, g.len(), |gb| {
                        for i in 0..g.len() {
                            gb[i] += g[i] * da[i];
                        }
                    });
                }
            }
            Op::Scale(x, c) => {
                if self.nodes[x].requires_grad {
                    Self::accum(grads, x, g.len(), |gx| {
                        for i in 0..g.len() {
                            gx[i] += g[i] * c;
                        }
                    });
                }
            }
            Op::Upsample2x(x) => {
                if !self.nodes[x].requires_grad {
                    return;
                }
                let sx = self.shape(x);
                let (h, w, c) = (sx[0], sx[1], sx[2]);
                let (oh, ow) = (2 * h, 2 * w);
                let ty = upsample_taps(h);
                let tx = upsample_taps(w);
                Self::accum(grads, x, h * w * c, |gx| {
                    for oy in 0..oh {
                        let (y0, y1, wy) = ty[oy];
                        for ox in 0..ow {
                            let (x0, x1, wx) = tx[ox];
                            let o = (oy * ow + ox) * c;
                            for ci in 0..c {
                                let gv = g[o + ci];
                                gx[(y0 * w + x0) * c + ci] += gv * (1.0 - wy) * (1.0 - wx);
                                gx[(y0 * w + x1) * c + ci] += gv * (1.0 - wy) * wx;
                                gx[(y1 * w + x0) * c + ci] += gv * wy * (1.0 - wx);
                                gx[(y1 * w + x1) * c + ci] += gv * wy * wx;
                            }
                        }
                    }
                });
            }
            Op::Reshape(x) => {
                if self.nodes[x].requires_grad {
                    Self::accum(grads, x, g.len(), |gx| {
                        for (a, v) in gx.iter_mut().zip(g) {
                            *a += v;
                        }
                    });
                }
            }
            Op::Sum(x) => {
                if self.nodes[x].requires_grad {
                    let len = self.data(x).len();
                    let gv = g[0];
                    Self::accum(grads, x, len, |gx| {
                        for a in gx.iter_mut() {
                            *a += gv;
                        }
                    });
                }
            }
            Op::BceMean { logits, target } => {
                if !self.nodes[logits].requires_grad {
                    return;
                }
                let dz = self.data(logits);
                let dt = self.data(target);
                let n = dz.len() as f32;
                let gv = g[0];
                Self::accum(grads, logits, dz.len(), |gl| {
                    for i in 0..dz.len() {
                        gl[i] += gv * (sigmoid_scalar(dz[i]) - dt[i]) / n;
                    }
                });
            }
        }
    }
}

pub fn sigmoid_scalar(z: f32) -> f32 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn matmul_raw(a: &[f32], b: &[f32], m: usize, k: usize, n: usize) -> Vec<f32> {
    let mut out = vec![0.0f32; m * n];
    for i in 0..m {
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            let orow = &mut out[i * n..(i + 1) * n];
            for (o, bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

/// Source taps for one output axis of 2x bilinear upsampling,
/// align-corners-false: src = (dst + 0.5)/2 - 0.5, clamped.
fn upsample_taps(src_len: usize) -> Vec<(usize, usize, f32)> {
    (0..2 * src_len)
        .map(|o| {
            let f = (o as f32 + 0.5) / 2.0 - 0.5;
            let fl = f.floor();
            let w = f - fl;
            let i0 = fl.max(0.0) as usize;
            let i1 = ((fl + 1.0).max(0.0) as usize).min(src_len - 1);
            let i0 = i0.min(src_len - 1);
            (i0, i1, w)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn rand_vec(rng: &mut StdRng, n: usize) -> Vec<f32> {
        (0..n).map(|_| rng.gen_range(-1.0f32..1.0)).collect()
    }

    #[test]
    fn matmul_identity() {
        let mut g = Graph::new();
        let i2 = g.constant(vec![1.0, 0.0, 0.0, 1.0], &[2, 2]);
        let a = g.constant(vec![1.0, 2.0, 3.0, 4.0], &[2, 2]);
        let c = g.matmul(i2, a).unwrap();
        assert_eq!(g.data(c), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn matmul_hand_product() {
        let mut g = Graph::new();
        let a = g.constant(vec![1.0, 2.0], &[1, 2]);
        let b = g.constant(vec![3.0, 4.0], &[2, 1]);
        let c = g.matmul(a, b).unwrap();
        assert_eq!(g.data(c), &[11.0]);
    }

    #[test]
    fn matmul_matches_triple_loop_oracle() {
        let mut rng = StdRng::seed_from_u64(3);
        let (m, k, n) = (3, 4, 2);
        let da = rand_vec(&mut rng, m * k);
        let db = rand_vec(&mut rng, k * n);
        let mut expect = vec![0.0f32; m * n];
        for i in 0..m {
            for j in 0..n {
                for p in 0..k {
                    expect[i * n + j] += da[i * k + p] * db[p * n + j];
                }
            }
        }
        let mut g = Graph::new();
        let a = g.constant(da, &[m, k]);
        let b = g.constant(db, &[k, n]);
        let c = g.matmul(a, b).unwrap();
        for (got, want) in g.data(c).iter().zip(&expect) {
            assert!((got - want).abs() < 1e-6);
        }
    }

    #[test]
    fn matmul_shape_mismatch_names_both_shapes() {
        let mut g = Graph::new();
        let a = g.constant(vec![0.0; 6], &[2, 3]);
        let b = g.constant(vec![0.0; 8], &[4, 2]);
        let err = g.matmul(a, b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]") && msg.contains("[4, 2]"), "{msg}");
    }

    #[test]
    fn conv1x1_identity_kernel() {
        let mut g = Graph::new();
        let x = g.constant(vec![1.0, 2.0, 3.0, 4.0], &[2, 2, 1]);
        let w = g.constant(vec![1.0], &[1, 1, 1, 1]);
        let b = g.constant(vec![0.0], &[1]);
        let y = g.conv2d(x, w, b, 1, 0).unwrap();
        assert_eq!(g.data(y), g.data(x));
    }

    #[test]
    fn conv3x3_delta_response() {
        let mut g = Graph::new();
        let mut xd = vec![0.0f32; 9];
        xd[4] = 1.0; // one-hot center
        let x = g.constant(xd, &[3, 3, 1]);
        let w = g.constant(vec![1.0; 9], &[3, 3, 1, 1]);
        let b = g.constant(vec![0.0], &[1]);
        let y = g.conv2d(x, w, b, 1, 1).unwrap();
        assert_eq!(g.data(y), &[1.0; 9]);
    }

    #[test]
    fn conv_matches_direct_loop_oracle() {
        let mut rng = StdRng::seed_from_u64(7);
        let (h, wd, cin, cout, k, pad) = (5, 5, 2, 3, 3, 1);
        let dx = rand_vec(&mut rng, h * wd * cin);
        let dw = rand_vec(&mut rng, k * k * cin * cout);
        let db = rand_vec(&mut rng, cout);
        // direct 6-loop oracle
        let mut expect = vec![0.0f32; h * wd * cout];
        for oy in 0..h {
            for ox in 0..wd {
                for co in 0..cout {
                    let mut acc = db[co];
                    for ky in 0..k {
                        for kx in 0..k {
                            let iy = oy as isize + ky as isize - pad as isize;
                            let ix = ox as isize + kx as isize - pad as isize;
                            if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                continue;
                            }
                            for ci in 0..cin {
                                acc += dx[(iy as usize * wd + ix as usize) * cin + ci]
                                    * dw[((ky * k + kx) * cin + ci) * cout + co];
                            }
                        }
                    }
                    expect[(oy * wd + ox) * cout + co] = acc;
                }
            }
        }
        let mut g = Graph::new();
        let x = g.constant(dx, &[h, wd, cin]);
        let w = g.constant(dw, &[k, k, cin, cout]);
        let b = g.constant(db, &[cout]);
        let y = g.conv2d(x, w, b, 1, pad).unwrap();
        for (got, want) in g.data(y).iter().zip(&expect) {
            assert!((got - want).abs() < 1e-5);
        }
    }

    #[test]
    fn layer_norm_zero_row() {
        let mut g = Graph::new();
        let x = g.constant(vec![0.0; 4], &[1, 4]);
        let y = g.layer_norm(x, 1e-5).unwrap();
        assert_eq!(g.data(y), &[0.0; 4]);
    }

    #[test]
    fn layer_norm_symmetric_pair() {
        let mut g = Graph::new();
        let x = g.constant(vec![1.0, -1.0], &[1, 2]);
        let y = g.layer_norm(x, 1e-5).unwrap();
        let want = 1.0 / (1.0f32 + 1e-5).sqrt();
        assert!((g.data(y)[0] - want).abs() < 1e-6);
        assert!((g.data(y)[1] + want).abs() < 1e-6);
    }

    #[test]
    fn layer_norm_rows_standardized() {
        let mut rng = StdRng::seed_from_u64(11);
        let (n, k) = (4, 8);
        let dx = rand_vec(&mut rng, n * k);
        let mut g = Graph::new();
        let x = g.constant(dx, &[n, k]);
        let y = g.layer_norm(x, 1e-5).unwrap();
        let dy = g.data(y);
        for i in 0..n {
            let row = &dy[i * k..(i + 1) * k];
            let mean = row.iter().sum::<f32>() / k as f32;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f32>() / k as f32;
            assert!(mean.abs() < 1e-6, "row {i} mean {mean}");
            assert!((var - 1.0).abs() < 1e-4, "row {i} var {var}");
        }
    }

    #[test]
    fn layer_norm_shift_invariant() {
        let mut rng = StdRng::seed_from_u64(12);
        let dx = rand_vec(&mut rng, 8);
        let shifted: Vec<f32> = dx.iter().map(|v| v + 3.25).collect();
        let mut g = Graph::new();
        let a = g.constant(dx, &[1, 8]);
        let b = g.constant(shifted, &[1, 8]);
        let ya = g.layer_norm(a, 1e-5).unwrap();
        let yb = g.layer_norm(b, 1e-5).unwrap();
        for (u, v) in g.data(ya).iter().zip(g.data(yb)) {
            assert!((u - v).abs() < 1e-5);
        }
    }

    #[test]
    fn softmax_single_entry() {
        let mut g = Graph::new();
        let x = g.constant(vec![-7.3], &[1, 1]);
        let y = g.softmax_rows(x).unwrap();
        assert_eq!(g.data(y), &[1.0]);
    }

    #[test]
    fn softmax_values() {
        let mut g = Graph::new();
        let x = g.constant(vec![0.0, 0.0, 0.0, 1.0], &[2, 2]);
        let y = g.softmax_rows(x).unwrap();
        let d = g.data(y);
        assert!((d[0] - 0.5).abs() < 1e-6 && (d[1] - 0.5).abs() < 1e-6);
        assert!((d[2] - 0.26894).abs() < 1e-5);
        assert!((d[3] - 0.73106).abs() < 1e-5);
    }

    #[test]
    fn softmax_rejects_nan() {
        let mut g = Graph::new();
        let x = g.constant(vec![f32::NAN, 0.0], &[1, 2]);
        assert!(g.softmax_rows(x).is_err());
    }

    #[test]
    fn elementwise_basics() {
        let mut g = Graph::new();
        let x = g.constant(vec![-1.0, 2.0], &[2]);
        let r = g.relu(x);
        assert_eq!(g.data(r), &[0.0, 2.0]);
        let z = g.constant(vec![0.0], &[1]);
        let s = g.sigmoid(z);
        assert_eq!(g.data(s), &[0.5]);
    }

    #[test]
    fn upsample_constant_map() {
        let mut g = Graph::new();
        let x = g.constant(vec![3.0; 3 * 3 * 2], &[3, 3, 2]);
        let y = g.upsample2x(x).unwrap();
        assert_eq!(g.shape(y), &[6, 6, 2]);
        for v in g.data(y) {
            assert!((v - 3.0).abs() < 1e-6);
        }
    }

    #[test]
    fn backward_sum_is_ones() {
        let mut g = Graph::new();
        let x = g.leaf(vec![1.0, 2.0, 3.0, 4.0], &[2, 2], true);
        let s = g.sum(x);
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[1.0, 1.0, 1.0, 1.0]);
    }

    #[test]
    fn backward_quadratic() {
        let mut g = Graph::new();
        let x = g.leaf(vec![1.0, 2.0], &[2], true);
        let xx = g.mul(x, x).unwrap();
        let s = g.sum(xx);
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[2.0, 4.0]);
    }

    #[test]
    fn backward_non_scalar_rejected() {
        let mut g = Graph::new();
        let x = g.leaf(vec![1.0, 2.0], &[2], true);
        assert!(g.backward(x).is_err());
    }

    #[test]
    fn grads_accumulate_until_zeroed() {
        let mut g = Graph::new();
        let x = g.leaf(vec![1.0], &[1], true);
        let s = g.scale(x, 2.0);
        g.backward(s).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[4.0]);
        g.zero_grads();
        assert!(g.grad(x).is_none());
    }

    /// Central finite differences on a scalar-valued builder.
    pub(crate) fn finite_diff_check(
        build: &mut dyn FnMut(&[f32]) -> f32,
        x0: &[f32],
        analytic: &[f32],
        h: f32,
        rel_tol: f32,
    ) {
        for i in 0..x0.len() {
            let mut xp = x0.to_vec();
            let mut xm = x0.to_vec();
            xp[i] += h;
            xm[i] -= h;
            let (fp, fm) = (build(&xp), build(&xm));
            let f0 = build(x0);
            // skip coordinates sitting on a kink (e.g. ReLU at 0), where the
            // one-sided slopes disagree and central differences are undefined
            let (dp, dm) = ((fp - f0) / h, (f0 - fm) / h);
            if (dp - dm).abs() > 0.1 * dp.abs().max(dm.abs()).max(1e-3) {
                continue;
            }
            let num = (fp - fm) / (2.0 * h);
            let denom = num.abs().max(analytic[i].abs()).max(1e-4);
            let rel = (num - analytic[i]).abs() / denom;
            assert!(
                rel < rel_tol,
                "param {i}: analytic {} vs numeric {num}, rel {rel}",
                analytic[i]
            );
        }
    }

    fn fd_on_op(op: impl Fn(&mut Graph, TensorId) -> TensorId + Copy, n: usize, seed: u64) {
        let mut rng = StdRng::seed_from_u64(seed);
        let x0 = rand_vec(&mut rng, n);
        let mut g = Graph::new();
        let x = g.leaf(x0.clone(), &[n], true);
        let y = op(&mut g, x);
        let s = g.sum(y);
        g.backward(s).unwrap();
        let analytic = g.grad(x).unwrap().to_vec();
        let mut eval = |v: &[f32]| {
            let mut g = Graph::new();
            let x = g.leaf(v.to_vec(), &[n], false);
            let y = op(&mut g, x);
            let s = g.sum(y);
            g.data(s)[0]
        };
        // 1e-2 relative: central differences in f32 carry ~1e-3 roundoff
        // noise; real gradient bugs are off by orders of magnitude.
        finite_diff_check(&mut eval, &x0, &analytic, 1e-3, 1e-2);
    }

    #[test]
    fn gradients_match_finite_differences() {
        // 100 randomized trials spread over the elementwise/normalizing ops
        for t in 0..25 {
            fd_on_op(|g, x| g.relu(x), 6, 100 + t);
            fd_on_op(|g, x| g.sigmoid(x), 6, 200 + t);
            fd_on_op(
                |g, x| {
                    let m = g.reshape(x, &[2, 3]).unwrap();
                    let y = g.softmax_rows(m).unwrap();
                    let w = g.constant(vec![0.3, -0.7, 1.1, 0.2, -0.4, 0.9], &[2, 3]);
                    g.mul(y, w).unwrap()
                },
                6,
                300 + t,
            );
            fd_on_op(
                |g, x| {
                    let m = g.reshape(x, &[2, 3]).unwrap();
                    let y = g.layer_norm(m, 1e-5).unwrap();
                    let w = g.constant(vec![1.0, -0.5, 0.25, 0.8, -1.2, 0.6], &[2, 3]);
                    g.mul(y, w).unwrap()
                },
                6,
                400 + t,
            );
        }
    }

    #[test]
    fn matmul_and_conv_gradients_match_finite_differences() {
        for t in 0..10 {
            fd_on_op(
                |g, x| {
                    let m = g.reshape(x, &[2, 3]).unwrap();
                    let w = g.constant(vec![0.5, -0.3, 0.7, 0.2, -0.9, 0.4], &[3, 2]);
                    g.matmul(m, w).unwrap()
                },
                6,
                500 + t,
            );
            fd_on_op(
                |g, x| {
                    let m = g.reshape(x, &[2, 3]).unwrap();
                    let w = g.constant(vec![0.5, -0.3, 0.7, 0.2, -0.9, 0.4], &[2, 3]);
                    g.matmul_nt(m, w).unwrap()
                },
                6,
                600 + t,
            );
            fd_on_op(
                |g, x| {
                    let m = g.reshape(x, &[3, 3, 1]).unwrap();
                    let w = g.constant(
                        vec![0.1, -0.2, 0.3, 0.0, 0.5, -0.1, 0.2, 0.4, -0.3],
                        &[3, 3, 1, 1],
                    );
                    let b = g.constant(vec![0.2], &[1]);
                    g.conv2d(m, w, b, 1, 1).unwrap()
                },
                9,
                700 + t,
            );
            fd_on_op(
                |g, x| {
                    let m = g.reshape(x, &[2, 2, 2]).unwrap();
                    let y = g.upsample2x(m).unwrap();
                    g.reshape(y, &[32]).unwrap()
                },
                8,
                800 + t,
            );
        }
    }

    #[test]
    fn same_seed_same_output() {
        let run = || {
            let mut rng = StdRng::seed_from_u64(99);
            let dx = rand_vec(&mut rng, 12);
            let mut g = Graph::new();
            let x = g.constant(dx, &[3, 4]);
            let y = g.layer_norm(x, 1e-5).unwrap();
            let z = g.softmax_rows(y).unwrap();
            g.data(z).to_vec()
        };
        assert_eq!(run(), run());
    }
}
