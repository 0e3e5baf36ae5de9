use std::collections::HashMap;
use std::time::{Duration, Instant};

use super::params::{ParamId, ParamStore};
use super::Tensor;
use crate::error::{Error, Result};

/// Handle to a value recorded in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

/// Backward rule of one recorded primitive.
///
/// `backward` receives the upstream gradient of the output and returns one
/// entry per input of [`Backward::inputs`], `None` where no gradient is needed.
pub(crate) trait Backward: Send + Sync {
    fn name(&self) -> &'static str;
    fn inputs(&self) -> Vec<Var>;
    fn backward(&self, g: &Graph, out: &Tensor, grad_out: &[f64]) -> Vec<Option<Vec<f64>>>;
}

struct Node {
    value: Tensor,
    requires_grad: bool,
    op: Option<Box<dyn Backward>>,
}

/// The computation record: an append-only, topologically ordered tape.
///
/// A graph is confined to one thread while it is being built and
/// differentiated. Parameters live outside in a [`ParamStore`]; each graph
/// registers the ones it touches as leaves, so independent graphs over the
/// same store can run concurrently.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    leaf_grads: HashMap<usize, Vec<f64>>,
    params: HashMap<ParamId, Var>,
    profile: Option<Profile>,
}

/// Wall time per primitive. Forward time of a primitive is the time since
/// the previous node was appended, so it is only meaningful when the graph
/// is built without unrelated work in between.
#[derive(Clone, Debug)]
pub struct Profile {
    last: Instant,
    pub forward: HashMap<&'static str, (usize, Duration)>,
    pub backward: HashMap<&'static str, (usize, Duration)>,
}

impl Profile {
    fn new() -> Self {
        Self {
            last: Instant::now(),
            forward: HashMap::new(),
            backward: HashMap::new(),
        }
    }

    /// `(name, forward, backward)` sorted by total time, largest first.
    pub fn summary(&self) -> Vec<(&'static str, Duration, Duration)> {
        let mut names: Vec<_> = self.forward.keys().chain(self.backward.keys()).copied().collect();
        names.sort();
        names.dedup();
        let mut rows: Vec<_> = names
            .into_iter()
            .map(|n| {
                let f = self.forward.get(n).map_or(Duration::ZERO, |e| e.1);
                let b = self.backward.get(n).map_or(Duration::ZERO, |e| e.1);
                (n, f, b)
            })
            .collect();
        rows.sort_by_key(|r| std::cmp::Reverse(r.1 + r.2));
        rows
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    /// Start recording per-primitive timings.
    pub fn enable_profiling(&mut self) {
        self.profile = Some(Profile::new());
    }

    pub fn profile(&self) -> Option<&Profile> {
        self.profile.as_ref()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Number of recorded primitives (nodes with a backward rule).
    pub fn record_len(&self) -> usize {
        self.nodes.iter().filter(|n| n.op.is_some()).count()
    }

    /// A leaf that does not take gradients.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push_leaf(value, false)
    }

    /// A leaf that accumulates gradients.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push_leaf(value, true)
    }

    /// Register a parameter from `store` as a gradient leaf. Repeated calls
    /// with the same id return the same handle, so a parameter referenced
    /// from several call sites accumulates one summed gradient.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let v = self.leaf(store.get(id).clone());
        self.params.insert(id, v);
        v
    }

    /// Same value as `v` but cut off from the record.
    pub fn detach(&mut self, v: Var) -> Var {
        let t = self.value(v).clone();
        self.constant(t)
    }

    fn push_leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        if let Some(p) = &mut self.profile {
            p.last = Instant::now();
        }
        self.nodes.push(Node {
            value,
            requires_grad,
            op: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// Append the output of a primitive. The record entry is kept only when
    /// some input requires a gradient.
    pub(crate) fn push(&mut self, value: Tensor, op: impl Backward + 'static) -> Var {
        let requires_grad = op.inputs().iter().any(|v| self.nodes[v.0].requires_grad);
        if let Some(p) = &mut self.profile {
            let now = Instant::now();
            let e = p.forward.entry(op.name()).or_default();
            e.0 += 1;
            e.1 += now - p.last;
            p.last = now;
        }
        self.nodes.push(Node {
            value,
            requires_grad,
            op: if requires_grad { Some(Box::new(op)) } else { None },
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient of a leaf, if any backward pass reached it.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.leaf_grads.get(&v.0).map(|g| g.as_slice())
    }

    /// Gradients of every registered parameter, in parameter-id order.
    pub fn param_grads(&self) -> Vec<(ParamId, &[f64])> {
        let mut out: Vec<_> = self
            .params
            .iter()
            .filter_map(|(&id, &v)| self.grad(v).map(|g| (id, g)))
            .collect();
        out.sort_by_key(|(id, _)| *id);
        out
    }

    pub fn param_var(&self, id: ParamId) -> Option<Var> {
        self.params.get(&id).copied()
    }

    pub fn zero_grad(&mut self) {
        self.leaf_grads.clear();
    }

    /// Reverse-mode sweep from a scalar output. Gradients accumulate into
    /// leaves across calls until [`Graph::zero_grad`].
    pub fn backward(&mut self, output: Var) -> Result<()> {
        let out_len = self.nodes[output.0].value.numel();
        if out_len != 1 {
            return Err(Error::shape(
                "backward",
                format!(
                    "output must be a scalar, got shape {:?}",
                    self.nodes[output.0].value.shape()
                ),
            ));
        }
        if !self.nodes[output.0].requires_grad {
            return Ok(());
        }
        let mut adj: Vec<Option<Vec<f64>>> = Vec::with_capacity(output.0 + 1);
        adj.resize_with(output.0 + 1, || None);
        adj[output.0] = Some(vec![1.0]);
        let mut leaf_updates = Vec::new();
        let mut bwd_times = Vec::new();
        for i in (0..=output.0).rev() {
            let Some(gi) = adj[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Some(op) => {
                    let inputs = op.inputs();
                    let t0 = self.profile.as_ref().map(|_| Instant::now());
                    let grads = op.backward(self, &node.value, &gi);
                    if let Some(t0) = t0 {
                        bwd_times.push((op.name(), t0.elapsed()));
                    }
                    debug_assert_eq!(inputs.len(), grads.len(), "{}", op.name());
                    for (v, g) in inputs.into_iter().zip(grads) {
                        let Some(g) = g else { continue };
                        if !self.nodes[v.0].requires_grad {
                            continue;
                        }
                        match &mut adj[v.0] {
                            Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                            slot => *slot = Some(g),
                        }
                    }
                }
                None if node.requires_grad => leaf_updates.push((i, gi)),
                None => {}
            }
        }
        if let Some(p) = &mut self.profile {
            for (name, d) in bwd_times {
                let e = p.backward.entry(name).or_default();
                e.0 += 1;
                e.1 += d;
            }
        }
        for (i, g) in leaf_updates {
            match self.leaf_grads.get_mut(&i) {
                Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                None => {
                    self.leaf_grads.insert(i, g);
                }
            }
        }
        Ok(())
    }
}
