use std::collections::HashMap;

use crate::numerics::Tensor;
use crate::scalar::Scalar;

/// Role of a parameter, which decides its initialization and whether weight
/// decay applies.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    Weight,
    Embedding,
    Bias,
    Norm,
}

impl ParamKind {
    pub fn decays(self) -> bool {
        matches!(self, ParamKind::Weight | ParamKind::Embedding)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub kind: ParamKind,
    pub value: Tensor<T>,
}

/// Named parameters in a fixed order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore<T> {
    params: Vec<Param<T>>,
    index: HashMap<String, usize>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self { params: Vec::new(), index: HashMap::new() }
    }

    /// Appends a parameter. Panics on a duplicate name, which is a
    /// programming error in model construction.
    pub fn insert(&mut self, name: impl Into<String>, kind: ParamKind, value: Tensor<T>) {
        let name = name.into();
        assert!(!self.index.contains_key(&name), "duplicate parameter {name}");
        self.index.insert(name.clone(), self.params.len());
        self.params.push(Param { name, kind, value });
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn get(&self, name: &str) -> Option<&Param<T>> {
        self.position(name).map(|i| &self.params[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Param<T>> {
        self.position(name).map(move |i| &mut self.params[i])
    }

    pub fn tensor(&self, name: &str) -> &Tensor<T> {
        &self.get(name).unwrap_or_else(|| panic!("no parameter {name}")).value
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Param<T>> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> std::slice::IterMut<'_, Param<T>> {
        self.params.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.iter().map(|p| p.name.as_str())
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        let mut out = ParamStore::new();
        for p in &self.params {
            out.insert(p.name.clone(), p.kind, p.value.cast());
        }
        out
    }
}
