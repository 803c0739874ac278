use std::collections::HashMap;

use crate::error::{invalid, Error, Result};
use crate::tensor::Tensor;

/// Index of a parameter inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

/// A named tensor with its gradient and momentum buffer.
///
/// Non-trainable entries (batchnorm running statistics) live in the same
/// store so that checkpoints capture them, but the optimizer skips them.
#[derive(Clone, Debug)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
    pub momentum: Tensor,
    pub trainable: bool,
}

impl Parameter {
    pub fn new(name: impl Into<String>, value: Tensor, trainable: bool) -> Self {
        let shape = value.shape();
        Parameter {
            name: name.into(),
            value,
            grad: Tensor::zeros(shape),
            momentum: Tensor::zeros(shape),
            trainable,
        }
    }
}

/// Flat parameter tree keyed by dotted path names, in insertion order.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    params: Vec<Parameter>,
    index: HashMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor, trainable: bool) -> Result<ParamId> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return invalid(format!("duplicate parameter name `{name}`"));
        }
        let id = ParamId(self.params.len());
        self.index.insert(name.clone(), id);
        self.params.push(Parameter::new(name, value, trainable));
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn by_name(&self, name: &str) -> Option<&Parameter> {
        self.id(name).map(|id| self.get(id))
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter> {
        self.params.iter_mut()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    /// Total number of trainable scalars.
    pub fn trainable_count(&self) -> usize {
        self.params.iter().filter(|p| p.trainable).map(|p| p.value.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.data_mut().iter_mut().for_each(|g| *g = 0.0);
        }
    }

    /// Replaces a parameter's value, keeping its shape.
    pub fn set_value(&mut self, id: ParamId, value: Tensor) -> Result<()> {
        let p = &mut self.params[id.0];
        if p.value.shape() != value.shape() {
            return Err(Error::ParameterMismatch {
                name: p.name.clone(),
                message: format!("shape {:?} vs {:?}", value.shape(), p.value.shape()),
            });
        }
        p.value = value;
        Ok(())
    }

    /// Names and shapes in insertion order.
    pub fn shape_tree(&self) -> Vec<(String, [usize; 4])> {
        self.params.iter().map(|p| (p.name.clone(), p.value.shape())).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_are_unique() {
        let mut s = ParamStore::new();
        s.add("a.weight", Tensor::zeros([2, 1, 1, 1]), true).unwrap();
        assert!(s.add("a.weight", Tensor::zeros([1, 1, 1, 1]), true).is_err());
        assert_eq!(s.trainable_count(), 2);
    }

    #[test]
    fn set_value_checks_shape() {
        let mut s = ParamStore::new();
        let id = s.add("w", Tensor::zeros([2, 2, 1, 1]), true).unwrap();
        assert!(s.set_value(id, Tensor::zeros([4, 1, 1, 1])).is_err());
        s.set_value(id, Tensor::full([2, 2, 1, 1], 1.0)).unwrap();
        assert_eq!(s.value(id).sum(), 4.0);
    }
}
