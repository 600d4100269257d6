use std::collections::HashMap;

use crate::error::{Result, TensorError};
use crate::tensor::Tensor;

/// Handle to a parameter registered in a [`VarStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Ordered table of named trainable tensors.
///
/// Models keep [`ParamId`]s and look values up at forward time; the optimizer
/// swaps in new tensors after each update. Because tensors are immutable,
/// cloning a store is an O(#params) snapshot.
#[derive(Clone, Default)]
pub struct VarStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    index: HashMap<String, usize>,
}

impl VarStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> Result<ParamId> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(TensorError::invalid("var_store", format!("duplicate parameter name {name}")));
        }
        let id = self.tensors.len();
        self.index.insert(name.clone(), id);
        self.names.push(name);
        self.tensors.push(value.with_requires_grad(true));
        Ok(ParamId(id))
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn id_of(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied().map(ParamId)
    }

    pub fn find(&self, name: &str) -> Option<&Tensor> {
        self.id_of(name).map(|id| self.get(id))
    }

    /// Replaces a parameter's value; the shape must not change.
    pub fn set(&mut self, id: ParamId, value: Tensor) -> Result<()> {
        let current = &self.tensors[id.0];
        if current.shape() != value.shape() {
            return Err(TensorError::shape("var_store", current.shape(), value.shape()));
        }
        self.tensors[id.0] = if value.requires_grad() && value.is_leaf() {
            value
        } else {
            value.with_requires_grad(true)
        };
        Ok(())
    }

    pub fn set_by_name(&mut self, name: &str, value: Tensor) -> Result<()> {
        let id = self
            .id_of(name)
            .ok_or_else(|| TensorError::invalid("var_store", format!("unknown parameter {name}")))?;
        self.set(id, value)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn num_elements(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    pub fn zero_grad(&self) {
        self.tensors.iter().for_each(Tensor::zero_grad);
    }

    /// Copy whose tensors are untracked, for graph-free inference.
    pub fn detached(&self) -> VarStore {
        VarStore {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(Tensor::detach).collect(),
            index: self.index.clone(),
        }
    }

    /// Bitwise equality of names, shapes and values.
    pub fn bit_equal(&self, other: &VarStore) -> bool {
        self.names == other.names
            && self.tensors.iter().zip(&other.tensors).all(|(a, b)| {
                a.shape() == b.shape()
                    && a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits())
            })
    }
}

impl std::fmt::Debug for VarStore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_map()
            .entries(self.iter().map(|(n, t)| (n, t.shape().to_vec())))
            .finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_are_unique_and_shapes_fixed() {
        let mut vs = VarStore::new();
        let id = vs.add("w", Tensor::zeros(&[2, 2])).unwrap();
        assert!(vs.add("w", Tensor::zeros(&[1])).is_err());
        assert!(vs.get(id).requires_grad());
        assert!(vs.set(id, Tensor::zeros(&[4])).is_err());
        vs.set(id, Tensor::ones(&[2, 2])).unwrap();
        assert_eq!(vs.find("w").unwrap().data(), &[1.0; 4]);
        assert_eq!(vs.num_elements(), 4);
    }

    #[test]
    fn snapshot_survives_updates() {
        let mut vs = VarStore::new();
        let id = vs.add("w", Tensor::zeros(&[3])).unwrap();
        let snap = vs.clone();
        vs.set(id, Tensor::ones(&[3])).unwrap();
        assert_eq!(snap.get(id).data(), &[0.0; 3]);
        assert!(!snap.bit_equal(&vs));
    }
}
