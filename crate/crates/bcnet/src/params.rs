//! Named parameter storage shared by the head, optimizer, and checkpoints.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::tensor::{Graph, TensorId};

#[derive(Debug, Clone)]
pub struct Param {
    pub data: Vec<f32>,
    pub shape: Vec<usize>,
    /// SGD momentum buffer.
    pub velocity: Vec<f32>,
    /// Frozen parameters are bound into the graph but never updated.
    pub frozen: bool,
}

/// Ordered, name-addressed parameter set.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    names: Vec<String>,
    params: Vec<Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: &str, data: Vec<f32>, shape: &[usize]) {
        assert!(
            self.index(name).is_none(),
            "duplicate parameter name {name}"
        );
        assert_eq!(shape.iter().product::<usize>(), data.len());
        let n = data.len();
        self.names.push(name.to_string());
        self.params.push(Param {
            data,
            shape: shape.to_vec(),
            velocity: vec![0.0; n],
            frozen: false,
        });
    }

    pub fn index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn name(&self, i: usize) -> &str {
        &self.names[i]
    }

    pub fn get(&self, i: usize) -> &Param {
        &self.params[i]
    }

    pub fn get_mut(&mut self, i: usize) -> &mut Param {
        &mut self.params[i]
    }

    pub fn by_name(&self, name: &str) -> Option<&Param> {
        self.index(name).map(|i| &self.params[i])
    }

    pub fn by_name_mut(&mut self, name: &str) -> Option<&mut Param> {
        self.index(name).map(move |i| &mut self.params[i])
    }

    pub fn freeze(&mut self, name: &str) {
        let i = self.index(name).unwrap_or_else(|| panic!("no parameter {name}"));
        self.params[i].frozen = true;
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Param)> {
        self.names.iter().map(|s| s.as_str()).zip(self.params.iter())
    }

    pub fn total_values(&self) -> usize {
        self.params.iter().map(|p| p.data.len()).sum()
    }
}

/// Kaiming-uniform fan-in initialization for a conv/linear weight.
pub fn kaiming_uniform(rng: &mut ChaCha8Rng, shape: &[usize]) -> Vec<f32> {
    // fan_in: all dims except the last (output) one
    let fan_in: usize = shape[..shape.len() - 1].iter().product::<usize>().max(1);
    let bound = (6.0 / fan_in as f32).sqrt();
    (0..shape.iter().product())
        .map(|_| rng.gen_range(-bound..bound))
        .collect()
}

/// Tensor ids of the parameters bound into one forward graph, aligned with
/// store indices. Used to pull gradients back out after `backward`.
#[derive(Debug, Default)]
pub struct Binding {
    pub ids: Vec<(usize, TensorId)>,
}

impl Binding {
    /// Bind a named parameter as a graph leaf (trainable unless `trainable`
    /// is false, e.g. frozen inference).
    pub fn bind(
        &mut self,
        graph: &mut Graph,
        store: &ParamStore,
        name: &str,
        trainable: bool,
    ) -> TensorId {
        let i = store
            .index(name)
            .unwrap_or_else(|| panic!("no parameter {name}"));
        let p = store.get(i);
        let id = graph.leaf(p.data.clone(), &p.shape, trainable);
        self.ids.push((i, id));
        id
    }

    /// Sum gradients from the graph into a dense per-parameter gradient set,
    /// aligned with the store layout. Unbound or gradient-free parameters get
    /// zeros.
    pub fn collect_grads(&self, graph: &Graph, store: &ParamStore) -> Vec<Vec<f32>> {
        let mut out: Vec<Vec<f32>> = (0..store.len())
            .map(|i| vec![0.0; store.get(i).data.len()])
            .collect();
        for &(pi, tid) in &self.ids {
            if let Some(g) = graph.grad(tid) {
                for (a, v) in out[pi].iter_mut().zip(g) {
                    *a += v;
                }
            }
        }
        out
    }
}
