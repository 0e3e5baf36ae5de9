use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;

use super::Tensor;

/// A parameter of one [`ParamStore`]: the store's identity plus the index
/// inside it, so parameters of different stores never alias in a graph.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId {
    store: u64,
    index: usize,
}

impl ParamId {
    pub fn index(self) -> usize {
        self.index
    }
}

static NEXT_STORE: AtomicU64 = AtomicU64::new(0);

/// Named trainable tensors. Model structs hold [`ParamId`]s into a store;
/// two call sites holding the same id share storage. Clones keep the
/// identity of the original, so ids stay valid across `clone`.
#[derive(Clone, Debug)]
pub struct ParamStore {
    id: u64,
    names: Vec<String>,
    values: Vec<Tensor>,
}

impl Default for ParamStore {
    fn default() -> Self {
        Self {
            id: NEXT_STORE.fetch_add(1, Ordering::Relaxed),
            names: Vec::new(),
            values: Vec::new(),
        }
    }
}

/// Equal names and values; store identity is ignored.
impl PartialEq for ParamStore {
    fn eq(&self, other: &Self) -> bool {
        self.names == other.names && self.values == other.values
    }
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    fn id_of(&self, index: usize) -> ParamId {
        ParamId { store: self.id, index }
    }

    fn check(&self, id: ParamId) -> usize {
        assert_eq!(id.store, self.id, "parameter {id:?} belongs to another store");
        id.index
    }

    /// True when `id` was issued by this store (or the store it was cloned from).
    pub fn owns(&self, id: ParamId) -> bool {
        id.store == self.id && id.index < self.values.len()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        self.names.push(name.into());
        self.values.push(value);
        self.id_of(self.values.len() - 1)
    }

    /// Weight initialised uniformly in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
    pub fn add_fan_in<R: Rng + ?Sized>(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        fan_in: usize,
        rng: &mut R,
    ) -> ParamId {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        self.add(name, Tensor::uniform(shape, -bound, bound, rng))
    }

    pub fn add_zeros(&mut self, name: impl Into<String>, shape: &[usize]) -> ParamId {
        self.add(name, Tensor::zeros(shape))
    }

    pub fn add_full(&mut self, name: impl Into<String>, shape: &[usize], v: f64) -> ParamId {
        self.add(name, Tensor::full(shape, v))
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.values[self.check(id)]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        let i = self.check(id);
        &mut self.values[i]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[self.check(id)]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(|i| self.id_of(i))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        let id = self.id;
        (0..self.values.len()).map(move |index| ParamId { store: id, index })
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor)> {
        self.names
            .iter()
            .zip(&self.values)
            .enumerate()
            .map(|(i, (n, v))| (self.id_of(i), n.as_str(), v))
    }

    /// Total number of trainable scalars.
    pub fn scalar_count(&self) -> usize {
        self.values.iter().map(Tensor::numel).sum()
    }
}
