use std::collections::BTreeMap;

use crate::error::{MtmdError, Result};
use crate::numerics::Tensor;
use crate::params::ParameterSet;

/// SGD with heavy-ball momentum:
///
/// ```text
/// v ← μ·v + g
/// θ ← θ − η·v
/// ```
#[derive(Debug, Clone, PartialEq)]
pub struct Sgd {
    pub learning_rate: f64,
    pub momentum: f64,
    velocity: BTreeMap<String, Tensor>,
}

impl Sgd {
    pub fn new(learning_rate: f64, momentum: f64) -> Self {
        Sgd {
            learning_rate,
            momentum,
            velocity: BTreeMap::new(),
        }
    }

    pub fn step(&mut self, params: &mut ParameterSet, grads: &BTreeMap<String, Tensor>) -> Result<()> {
        for (name, g) in grads {
            let p = params
                .get_mut(name)
                .ok_or_else(|| MtmdError::Contract(format!("gradient for unknown parameter `{name}`")))?;
            if p.shape() != g.shape() {
                return Err(MtmdError::shape("sgd", p.shape(), g.shape()));
            }
            let v = self
                .velocity
                .entry(name.clone())
                .or_insert_with(|| Tensor::zeros(g.shape()));
            for ((vi, gi), pi) in v.data_mut().iter_mut().zip(g.data()).zip(p.data_mut()) {
                *vi = self.momentum * *vi + gi;
                *pi -= self.learning_rate * *vi;
            }
        }
        Ok(())
    }
}
