use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Index of a parameter inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
struct Entry<T> {
    name: String,
    value: Tensor<T>,
    trainable: bool,
}

/// Named parameter tensors plus one gradient buffer per parameter.
///
/// Gradients are only ever cleared by [`ParamStore::zero_grad`].
#[derive(Debug, Clone)]
pub struct ParamStore<T> {
    entries: Vec<Entry<T>>,
    by_name: BTreeMap<String, usize>,
    grads: Grads<T>,
    step: u64,
}

impl<T: Scalar> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            entries: Vec::new(),
            by_name: BTreeMap::new(),
            grads: Grads { bufs: Vec::new() },
            step: 0,
        }
    }

    /// Registers a new parameter. Names must be unique.
    pub fn insert(&mut self, name: &str, value: Tensor<T>) -> ParamId {
        assert!(
            !self.by_name.contains_key(name),
            "duplicate parameter name {name}"
        );
        let id = self.entries.len();
        self.grads.bufs.push(vec![T::zero(); value.len()]);
        self.entries.push(Entry {
            name: name.to_string(),
            value,
            trainable: true,
        });
        self.by_name.insert(name.to_string(), id);
        ParamId(id)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).map(|&i| ParamId(i))
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn get(&self, id: ParamId) -> &[T] {
        self.entries[id.0].value.data()
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut [T] {
        self.entries[id.0].value.data_mut()
    }

    pub fn tensor(&self, id: ParamId) -> &Tensor<T> {
        &self.entries[id.0].value
    }

    /// Replaces a parameter value, keeping its registered shape.
    pub fn set(&mut self, id: ParamId, values: &[T]) -> Result<()> {
        let e = &mut self.entries[id.0];
        if e.value.len() != values.len() {
            return Err(Error::Shape(format!(
                "parameter {} expects {} values, got {}",
                e.name,
                e.value.len(),
                values.len()
            )));
        }
        e.value.data_mut().copy_from_slice(values);
        Ok(())
    }

    pub fn is_trainable(&self, id: ParamId) -> bool {
        self.entries[id.0].trainable
    }

    pub fn set_trainable(&mut self, id: ParamId, trainable: bool) {
        self.entries[id.0].trainable = trainable;
    }

    pub fn grad(&self, id: ParamId) -> &[T] {
        &self.grads.bufs[id.0]
    }

    pub fn grads(&self) -> &Grads<T> {
        &self.grads
    }

    pub fn grads_mut(&mut self) -> &mut Grads<T> {
        &mut self.grads
    }

    /// Adds an externally accumulated gradient buffer into the store.
    pub fn accumulate(&mut self, other: &Grads<T>) {
        self.grads.add_assign(other);
    }

    pub fn zero_grad(&mut self) {
        self.grads.zero();
    }

    /// Fresh zeroed gradient buffer matching this store's layout.
    pub fn zero_grads_like(&self) -> Grads<T> {
        Grads {
            bufs: self.entries.iter().map(|e| vec![T::zero(); e.value.len()]).collect(),
        }
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub(crate) fn bump_step(&mut self) {
        self.step += 1;
    }

    pub fn set_step(&mut self, step: u64) {
        self.step = step;
    }

    /// Total number of scalar entries over the given parameters.
    pub fn count(&self, ids: impl IntoIterator<Item = ParamId>) -> usize {
        ids.into_iter().map(|id| self.entries[id.0].value.len()).sum()
    }

    pub fn check_finite(&self) -> Result<()> {
        for e in &self.entries {
            e.value.check_finite(&e.name)?;
        }
        Ok(())
    }

    pub(crate) fn values_and_grads_mut(&mut self) -> impl Iterator<Item = (&mut [T], &[T], bool)> {
        self.entries
            .iter_mut()
            .zip(self.grads.bufs.iter())
            .map(|(e, g)| (e.value.data_mut(), g.as_slice(), e.trainable))
    }
}

/// Gradient buffers aligned with a [`ParamStore`].
#[derive(Debug, Clone, PartialEq)]
pub struct Grads<T> {
    bufs: Vec<Vec<T>>,
}

impl<T: Scalar> Grads<T> {
    #[inline]
    pub fn get_mut(&mut self, id: ParamId) -> &mut [T] {
        &mut self.bufs[id.0]
    }

    pub fn get(&self, id: ParamId) -> &[T] {
        &self.bufs[id.0]
    }

    pub fn zero(&mut self) {
        for b in &mut self.bufs {
            b.iter_mut().for_each(|v| *v = T::zero());
        }
    }

    pub fn add_assign(&mut self, other: &Grads<T>) {
        assert_eq!(self.bufs.len(), other.bufs.len());
        for (a, b) in self.bufs.iter_mut().zip(&other.bufs) {
            for (x, &y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, s: T) {
        for b in &mut self.bufs {
            b.iter_mut().for_each(|v| *v *= s);
        }
    }

    pub fn norm(&self, id: ParamId) -> f64 {
        self.bufs[id.0]
            .iter()
            .map(|v| v.to_f64_lossy().powi(2))
            .sum::<f64>()
            .sqrt()
    }

    pub fn check_finite(&self, names: &ParamStore<T>) -> Result<()> {
        for (i, b) in self.bufs.iter().enumerate() {
            crate::tensor::check_finite(b, &format!("grad({})", names.entries[i].name))?;
        }
        Ok(())
    }
}
