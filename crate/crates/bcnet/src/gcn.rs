//! Non-local graph convolution: adjacency from pairwise feature similarity
//! and the residual GCN forward pass.
//!
//! Each spatial position of the ROI feature map is one graph node. The
//! adjacency is dense, built from dot-product similarity of two learned 1x1
//! embeddings, row-normalized by softmax. The block output is
//! `ReLU(LN(A X Wg)) + X`.

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::params::{kaiming_uniform, Binding, ParamStore};
use crate::tensor::{Graph, TensorId};

/// Parameter namespace of one non-local block over K-channel node features.
#[derive(Debug, Clone)]
pub struct NonLocalBlock {
    pub prefix: String,
    pub channels: usize,
    /// Embedding width of theta/phi; K/2 by default.
    pub k_half: usize,
}

impl NonLocalBlock {
    pub fn init(store: &mut ParamStore, rng: &mut ChaCha8Rng, prefix: &str, channels: usize) -> Self {
        let k_half = (channels / 2).max(1);
        let block = NonLocalBlock {
            prefix: prefix.to_string(),
            channels,
            k_half,
        };
        store.add(
            &format!("{prefix}.theta.w"),
            kaiming_uniform(rng, &[channels, k_half]),
            &[channels, k_half],
        );
        store.add(
            &format!("{prefix}.phi.w"),
            kaiming_uniform(rng, &[channels, k_half]),
            &[channels, k_half],
        );
        store.add(
            &format!("{prefix}.wg"),
            kaiming_uniform(rng, &[channels, channels]),
            &[channels, channels],
        );
        block
    }

    /// Zero-initialized variant, used by the structural-identity tests.
    pub fn init_zero(store: &mut ParamStore, prefix: &str, channels: usize) -> Self {
        let k_half = (channels / 2).max(1);
        store.add(
            &format!("{prefix}.theta.w"),
            vec![0.0; channels * k_half],
            &[channels, k_half],
        );
        store.add(
            &format!("{prefix}.phi.w"),
            vec![0.0; channels * k_half],
            &[channels, k_half],
        );
        store.add(
            &format!("{prefix}.wg"),
            vec![0.0; channels * channels],
            &[channels, channels],
        );
        NonLocalBlock {
            prefix: prefix.to_string(),
            channels,
            k_half,
        }
    }

    /// A = softmax_rows( (X theta)(X phi)ᵀ ) over an N×K node matrix.
    pub fn build_adjacency(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        bind: &mut Binding,
        x: TensorId,
        trainable: bool,
    ) -> Result<TensorId> {
        let theta = bind.bind(g, store, &format!("{}.theta.w", self.prefix), trainable);
        let phi = bind.bind(g, store, &format!("{}.phi.w", self.prefix), trainable);
        let et = g.matmul(x, theta)?;
        let ep = g.matmul(x, phi)?;
        let logits = g.matmul_nt(et, ep)?;
        g.softmax_rows(logits)
    }

    /// Residual GCN pass: ReLU(LN(A X Wg)) + X. Output shape equals input.
    pub fn forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        bind: &mut Binding,
        x: TensorId,
        trainable: bool,
    ) -> Result<TensorId> {
        let a = self.build_adjacency(g, store, bind, x, trainable)?;
        let wg = bind.bind(g, store, &format!("{}.wg", self.prefix), trainable);
        let ax = g.matmul(a, x)?;
        let axw = g.matmul(ax, wg)?;
        let ln = g.layer_norm(axw, crate::LN_EPS)?;
        let act = g.relu(ln);
        g.add(act, x)
    }
}

/// Dense row-stochastic adjacency snapshot for validation and inspection.
#[derive(Debug, Clone)]
pub struct Adjacency {
    pub a: Vec<f32>,
    pub n: usize,
}

impl Adjacency {
    pub fn from_graph(g: &Graph, id: TensorId) -> Self {
        let s = g.shape(id);
        assert_eq!(s.len(), 2);
        assert_eq!(s[0], s[1]);
        Adjacency {
            a: g.data(id).to_vec(),
            n: s[0],
        }
    }

    /// Rows sum to 1 within tolerance; entries in [0, 1].
    pub fn validate(&self) -> Result<()> {
        for i in 0..self.n {
            let row = &self.a[i * self.n..(i + 1) * self.n];
            let s: f32 = row.iter().sum();
            if (s - 1.0).abs() > 1e-5 {
                return Err(Error::Numeric {
                    op: "adjacency",
                    msg: format!("row {i} sums to {s}"),
                });
            }
            if row.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
                return Err(Error::Numeric {
                    op: "adjacency",
                    msg: format!("row {i} has entries outside [0,1]"),
                });
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn rand_x(seed: u64, n: usize, k: usize) -> Vec<f32> {
        let mut r = rng(seed);
        (0..n * k).map(|_| r.gen_range(-1.0f32..1.0)).collect()
    }

    #[test]
    fn single_node_adjacency_is_one() {
        let mut store = ParamStore::new();
        let mut r = rng(1);
        let block = NonLocalBlock::init(&mut store, &mut r, "gcn", 4);
        let mut g = Graph::new();
        let mut bind = Binding::default();
        let x = g.constant(vec![0.3, -0.2, 0.8, 0.1], &[1, 4]);
        let a = block.build_adjacency(&mut g, &store, &mut bind, x, false).unwrap();
        assert_eq!(g.data(a), &[1.0]);
    }

    #[test]
    fn identity_embeddings_match_scalar_softmax() {
        // theta = phi = identity on K=1; X = [[0],[1]] gives the scalar
        // softmax of [0,0] and [0,1] per row.
        let mut store = ParamStore::new();
        store.add("gcn.theta.w", vec![1.0], &[1, 1]);
        store.add("gcn.phi.w", vec![1.0], &[1, 1]);
        store.add("gcn.wg", vec![0.0], &[1, 1]);
        let block = NonLocalBlock {
            prefix: "gcn".into(),
            channels: 1,
            k_half: 1,
        };
        let mut g = Graph::new();
        let mut bind = Binding::default();
        let x = g.constant(vec![0.0, 1.0], &[2, 1]);
        let a = block.build_adjacency(&mut g, &store, &mut bind, x, false).unwrap();
        let d = g.data(a);
        assert!((d[0] - 0.5).abs() < 1e-6 && (d[1] - 0.5).abs() < 1e-6);
        assert!((d[2] - 0.26894).abs() < 1e-5);
        assert!((d[3] - 0.73106).abs() < 1e-5);
    }

    #[test]
    fn adjacency_rows_stochastic() {
        let mut store = ParamStore::new();
        let mut r = rng(5);
        let block = NonLocalBlock::init(&mut store, &mut r, "gcn", 8);
        let mut g = Graph::new();
        let mut bind = Binding::default();
        let x = g.constant(rand_x(6, 9, 8), &[9, 8]);
        let a = block.build_adjacency(&mut g, &store, &mut bind, x, false).unwrap();
        Adjacency::from_graph(&g, a).validate().unwrap();
    }

    #[test]
    fn zero_wg_is_identity() {
        let mut store = ParamStore::new();
        let mut r = rng(7);
        let block = NonLocalBlock::init(&mut store, &mut r, "gcn", 4);
        store.by_name_mut("gcn.wg").unwrap().data.fill(0.0);
        let mut g = Graph::new();
        let mut bind = Binding::default();
        let xd = rand_x(8, 6, 4);
        let x = g.constant(xd.clone(), &[6, 4]);
        let z = block.forward(&mut g, &store, &mut bind, x, false).unwrap();
        assert_eq!(g.data(z), &xd[..]);
    }

    #[test]
    fn output_shape_matches_input() {
        for (n, k) in [(1, 2), (4, 4), (9, 6)] {
            let mut store = ParamStore::new();
            let mut r = rng(9);
            let block = NonLocalBlock::init(&mut store, &mut r, "gcn", k);
            let mut g = Graph::new();
            let mut bind = Binding::default();
            let x = g.constant(rand_x(n as u64 * 31 + k as u64, n, k), &[n, k]);
            let z = block.forward(&mut g, &store, &mut bind, x, false).unwrap();
            assert_eq!(g.shape(z), &[n, k]);
        }
    }

    /// Independent dense oracle for the full block: materializes embeddings,
    /// adjacency, matrix products, normalization, rectification, and the
    /// residual with plain loops, no autodiff-core code on the compute path.
    fn dense_oracle(x: &[f32], n: usize, k: usize, kh: usize, th: &[f32], ph: &[f32], wg: &[f32]) -> Vec<f32> {
        let mm = |a: &[f32], b: &[f32], m: usize, kk: usize, nn: usize| {
            let mut o = vec![0.0f64; m * nn];
            for i in 0..m {
                for j in 0..nn {
                    for p in 0..kk {
                        o[i * nn + j] += a[i * kk + p] as f64 * b[p * nn + j] as f64;
                    }
                }
            }
            o
        };
        let xf: Vec<f32> = x.to_vec();
        let et = mm(&xf, th, n, k, kh);
        let ep = mm(&xf, ph, n, k, kh);
        let mut logits = vec![0.0f64; n * n];
        for i in 0..n {
            for j in 0..n {
                for p in 0..kh {
                    logits[i * n + j] += et[i * kh + p] * ep[j * kh + p];
                }
            }
        }
        let mut a = vec![0.0f64; n * n];
        for i in 0..n {
            let row = &logits[i * n..(i + 1) * n];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = row.iter().map(|v| (v - max).exp()).collect();
            let s: f64 = exps.iter().sum();
            for j in 0..n {
                a[i * n + j] = exps[j] / s;
            }
        }
        let axf: Vec<f32> = mm(
            &a.iter().map(|v| *v as f32).collect::<Vec<_>>(),
            &xf,
            n,
            n,
            k,
        )
        .iter()
        .map(|v| *v as f32)
        .collect();
        let axw = mm(&axf, wg, n, k, k);
        let mut out = vec![0.0f32; n * k];
        for i in 0..n {
            let row = &axw[i * k..(i + 1) * k];
            let mean: f64 = row.iter().sum::<f64>() / k as f64;
            let var: f64 = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / k as f64;
            let inv = 1.0 / (var + crate::LN_EPS as f64).sqrt();
            for j in 0..k {
                let ln = ((row[j] - mean) * inv) as f32;
                out[i * k + j] = ln.max(0.0) + x[i * k + j];
            }
        }
        out
    }

    #[test]
    fn forward_matches_dense_oracle() {
        let (n, k) = (2, 2);
        let mut store = ParamStore::new();
        let mut r = rng(21);
        let block = NonLocalBlock::init(&mut store, &mut r, "gcn", k);
        let xd = rand_x(22, n, k);
        let mut g = Graph::new();
        let mut bind = Binding::default();
        let x = g.constant(xd.clone(), &[n, k]);
        let z = block.forward(&mut g, &store, &mut bind, x, false).unwrap();
        let want = dense_oracle(
            &xd,
            n,
            k,
            block.k_half,
            &store.by_name("gcn.theta.w").unwrap().data,
            &store.by_name("gcn.phi.w").unwrap().data,
            &store.by_name("gcn.wg").unwrap().data,
        );
        for (got, w) in g.data(z).iter().zip(&want) {
            assert!((got - w).abs() < 1e-5, "{got} vs {w}");
        }
    }

    #[test]
    fn forward_matches_dense_oracle_larger() {
        let (n, k) = (9, 6);
        let mut store = ParamStore::new();
        let mut r = rng(31);
        let block = NonLocalBlock::init(&mut store, &mut r, "gcn", k);
        let xd = rand_x(32, n, k);
        let mut g = Graph::new();
        let mut bind = Binding::default();
        let x = g.constant(xd.clone(), &[n, k]);
        let z = block.forward(&mut g, &store, &mut bind, x, false).unwrap();
        let want = dense_oracle(
            &xd,
            n,
            k,
            block.k_half,
            &store.by_name("gcn.theta.w").unwrap().data,
            &store.by_name("gcn.phi.w").unwrap().data,
            &store.by_name("gcn.wg").unwrap().data,
        );
        for (got, w) in g.data(z).iter().zip(&want) {
            assert!((got - w).abs() < 1e-5, "{got} vs {w}");
        }
    }

    #[test]
    fn permutation_equivariance() {
        let (n, k) = (6, 4);
        let mut store = ParamStore::new();
        let mut r = rng(41);
        let block = NonLocalBlock::init(&mut store, &mut r, "gcn", k);
        let xd = rand_x(42, n, k);
        let perm = [3usize, 0, 5, 1, 4, 2];
        let mut xp = vec![0.0f32; n * k];
        for (dst, &src) in perm.iter().enumerate() {
            xp[dst * k..(dst + 1) * k].copy_from_slice(&xd[src * k..(src + 1) * k]);
        }
        let fwd = |xd: &[f32]| {
            let mut g = Graph::new();
            let mut bind = Binding::default();
            let x = g.constant(xd.to_vec(), &[n, k]);
            let z = block.forward(&mut g, &store, &mut bind, x, false).unwrap();
            g.data(z).to_vec()
        };
        let z = fwd(&xd);
        let zp = fwd(&xp);
        for (dst, &src) in perm.iter().enumerate() {
            for j in 0..k {
                assert!(
                    (zp[dst * k + j] - z[src * k + j]).abs() < 1e-5,
                    "node {dst} ({src})"
                );
            }
        }
    }

    #[test]
    fn non_locality_distant_nodes_coupled() {
        // gradient of output node 0 w.r.t. input node n-1 is nonzero for the
        // GCN; a single 3x3 conv has exactly zero coupling at that distance.
        let (h, w, k) = (5, 5, 4);
        let n = h * w;
        let mut store = ParamStore::new();
        let mut r = rng(51);
        let block = NonLocalBlock::init(&mut store, &mut r, "gcn", k);
        let xd = rand_x(52, n, k);

        let mut g = Graph::new();
        let mut bind = Binding::default();
        let x = g.leaf(xd.clone(), &[n, k], true);
        let z = block.forward(&mut g, &store, &mut bind, x, false).unwrap();
        // select output node 0
        let mut sel = vec![0.0f32; n * k];
        sel[..k].fill(1.0);
        let selt = g.constant(sel, &[n, k]);
        let picked = g.mul(z, selt).unwrap();
        let s = g.sum(picked);
        g.backward(s).unwrap();
        let grad = g.grad(x).unwrap();
        let far = &grad[(n - 1) * k..n * k];
        assert!(far.iter().any(|v| v.abs() > 1e-8), "GCN coupling missing");

        // conv comparison: 3x3 conv output at (0,0) vs input at (4,4)
        let mut g2 = Graph::new();
        let x2 = g2.leaf(xd, &[n, k], true);
        let map = g2.reshape(x2, &[h, w, k]).unwrap();
        let wt = g2.constant(kaiming_uniform(&mut r, &[3, 3, k, k]), &[3, 3, k, k]);
        let bt = g2.constant(vec![0.0; k], &[k]);
        let y = g2.conv2d(map, wt, bt, 1, 1).unwrap();
        let mut sel2 = vec![0.0f32; n * k];
        sel2[..k].fill(1.0);
        let flat = g2.reshape(y, &[n, k]).unwrap();
        let selt2 = g2.constant(sel2, &[n, k]);
        let picked2 = g2.mul(flat, selt2).unwrap();
        let s2 = g2.sum(picked2);
        g2.backward(s2).unwrap();
        let grad2 = g2.grad(x2).unwrap();
        let far2 = &grad2[(n - 1) * k..n * k];
        assert!(far2.iter().all(|v| v.abs() == 0.0), "conv should be local");
    }
}
