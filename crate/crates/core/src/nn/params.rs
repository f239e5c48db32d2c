//! Parameter storage shared between the optimizer and the tape.
//!
//! Tensors live outside any tape and are re-inserted as leaves at the start
//! of each forward pass; `ParamRef` indexes into both the store and the
//! per-pass binding.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tape::{NodeId, Tape};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamRef(pub usize);

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParamTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Params {
    pub tensors: Vec<ParamTensor>,
}

impl Params {
    pub fn new() -> Self {
        Params::default()
    }

    pub fn add(&mut self, name: &str, shape: Vec<usize>, data: Vec<f64>) -> ParamRef {
        assert_eq!(shape.iter().product::<usize>(), data.len());
        self.tensors.push(ParamTensor { name: name.to_string(), shape, data });
        ParamRef(self.tensors.len() - 1)
    }

    /// Glorot uniform: U(-a, a) with a = sqrt(6 / (fan_in + fan_out)).
    pub fn xavier(
        &mut self,
        rng: &mut impl Rng,
        name: &str,
        shape: Vec<usize>,
        fan_in: usize,
        fan_out: usize,
    ) -> ParamRef {
        let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let n = shape.iter().product::<usize>();
        let data: Vec<f64> = (0..n).map(|_| rng.gen_range(-a..a)).collect();
        self.add(name, shape, data)
    }

    pub fn zeros(&mut self, name: &str, shape: Vec<usize>) -> ParamRef {
        let n = shape.iter().product::<usize>();
        self.add(name, shape, vec![0.0; n])
    }

    /// Inserts every tensor as a tape leaf, in store order.
    pub fn bind(&self, tape: &mut Tape) -> Vec<NodeId> {
        self.tensors.iter().map(|t| tape.leaf(t.data.clone())).collect()
    }

    pub fn total_scalars(&self) -> usize {
        self.tensors.iter().map(|t| t.data.len()).sum()
    }
}
