//! Named parameter storage shared by the model, optimizer and checkpoints.

use std::collections::HashMap;
use std::sync::Arc;

use crate::error::TensorError;
use crate::tensor::{Real, Tensor};

/// Index of a tensor inside a [`ParamSet`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Ordered collection of named tensors. Insertion order is the canonical
/// order for checkpoints, optimizer state and gradient vectors.
#[derive(Clone, Debug, Default)]
pub struct ParamSet<T> {
    names: Vec<String>,
    values: Vec<Arc<Tensor<T>>>,
    index: HashMap<String, ParamId>,
}

impl<T: Real> ParamSet<T> {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            values: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn insert(&mut self, name: &str, value: Tensor<T>) -> Result<ParamId, TensorError> {
        if self.index.contains_key(name) {
            return Err(TensorError::Contract(format!("duplicate parameter `{name}`")));
        }
        let id = ParamId(self.values.len());
        self.names.push(name.to_string());
        self.values.push(Arc::new(value));
        self.index.insert(name.to_string(), id);
        Ok(id)
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.values[id.0]
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor<T>> {
        self.id(name).map(|id| self.get(id))
    }

    pub(crate) fn shared(&self, id: ParamId) -> Arc<Tensor<T>> {
        Arc::clone(&self.values[id.0])
    }

    /// Mutable access; clones the tensor first if a tape still holds it.
    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        Arc::make_mut(&mut self.values[id.0])
    }

    /// Replaces a value, keeping its shape.
    pub fn set(&mut self, id: ParamId, value: Tensor<T>) -> Result<(), TensorError> {
        if value.shape() != self.get(id).shape() {
            return Err(TensorError::dims("set", self.get(id).shape(), value.shape()));
        }
        self.values[id.0] = Arc::new(value);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor<T>)> {
        self.names
            .iter()
            .zip(&self.values)
            .enumerate()
            .map(|(i, (n, v))| (ParamId(i), n.as_str(), v.as_ref()))
    }

    pub fn total_elements(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }

    /// Zero tensors matching every parameter's shape.
    pub fn zeros_like(&self) -> Vec<Tensor<T>> {
        self.values.iter().map(|v| Tensor::zeros(v.shape())).collect()
    }
}

impl<T: PartialEq> PartialEq for ParamSet<T> {
    fn eq(&self, other: &Self) -> bool {
        self.names == other.names && self.values == other.values
    }
}
