//! Named learnable tensors.

use std::collections::BTreeMap;

use rand::Rng;

use crate::error::{MtmdError, Result};
use crate::numerics::{Tape, Tensor, Var};

/// All learnable tensors addressed by dotted names such as
/// `encoder.l0.w_z` or `regressor.out.b`. Iteration order is the name order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParameterSet {
    tensors: BTreeMap<String, Tensor>,
}

/// Tape handles for a registered [`ParameterSet`].
#[derive(Debug, Clone, Default)]
pub struct ParamVars {
    vars: BTreeMap<String, Var>,
}

impl ParamVars {
    pub fn get(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| MtmdError::Contract(format!("parameter `{name}` is not registered")))
    }
}

impl ParameterSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) {
        self.tensors.insert(name.into(), value);
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .get(name)
            .ok_or_else(|| MtmdError::Contract(format!("missing parameter `{name}`")))
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors.get_mut(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.tensors.iter()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.tensors.keys()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn as_map(&self) -> &BTreeMap<String, Tensor> {
        &self.tensors
    }

    pub fn from_map(tensors: BTreeMap<String, Tensor>) -> Self {
        ParameterSet { tensors }
    }

    pub fn into_map(self) -> BTreeMap<String, Tensor> {
        self.tensors
    }

    /// Merges another set in, replacing clashing names.
    pub fn extend(&mut self, other: ParameterSet) {
        self.tensors.extend(other.tensors);
    }

    /// Registers every tensor as a named leaf on `tape`.
    pub fn register(&self, tape: &mut Tape) -> ParamVars {
        let vars = self
            .tensors
            .iter()
            .map(|(name, t)| (name.clone(), tape.param(name.clone(), t.clone())))
            .collect();
        ParamVars { vars }
    }

    /// Total number of scalar entries.
    pub fn numel(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }
}

/// Uniform(-bound, bound) tensor.
pub fn uniform<R: Rng>(rng: &mut R, shape: &[usize], bound: f64) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-bound..=bound)).collect();
    Tensor::from_parts(shape.to_vec(), data)
}
