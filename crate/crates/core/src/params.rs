//! Named trainable tensors.

use rand::Rng;

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub tensor: Tensor,
    /// A row that is neither trained nor regularized (the embedding pad row).
    pub frozen_row: Option<usize>,
}

/// The complete, ordered set of named parameters of a model.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ModelParams {
    params: Vec<Param>,
}

impl ModelParams {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) -> ParamId {
        self.insert_with_frozen_row(name, tensor, None)
    }

    pub fn insert_with_frozen_row(
        &mut self,
        name: impl Into<String>,
        tensor: Tensor,
        frozen_row: Option<usize>,
    ) -> ParamId {
        let name = name.into();
        debug_assert!(self.find(&name).is_none(), "duplicate parameter {name}");
        self.params.push(Param {
            name,
            tensor: tensor.with_requires_grad(true),
            frozen_row,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.tensor.numel()).sum()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.params.iter_mut()
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param {
        &mut self.params[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn by_name(&self, name: &str) -> Result<&Param> {
        self.find(name)
            .map(|id| self.get(id))
            .ok_or_else(|| Error::Config(format!("no parameter named {name}")))
    }

    pub fn by_name_mut(&mut self, name: &str) -> Result<&mut Param> {
        let id = self
            .find(name)
            .ok_or_else(|| Error::Config(format!("no parameter named {name}")))?;
        Ok(self.get_mut(id))
    }

    /// Records every parameter on `tape` as a trainable leaf, in id order.
    pub fn bind(&self, tape: &mut Tape) -> Vec<Var> {
        self.params.iter().map(|p| tape.param(&p.tensor)).collect()
    }

    /// Adds the tape's leaf gradients into the stored gradient buffers.
    pub fn accumulate_grads(&mut self, tape: &Tape, bound: &[Var]) {
        for (p, &v) in self.params.iter_mut().zip(bound) {
            for (acc, g) in p.tensor.grad_mut().iter_mut().zip(tape.grad(v)) {
                *acc += g;
            }
        }
    }

    pub fn zero_grad(&mut self) {
        self.params.iter_mut().for_each(|p| p.tensor.zero_grad());
    }

    pub fn grad_norm(&self) -> f64 {
        self.params
            .iter()
            .flat_map(|p| p.tensor.grad())
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }

    /// `coefficient · Σ θ²` over every parameter, frozen rows excluded.
    pub fn l2_penalty(&self, tape: &mut Tape, bound: &[Var], coefficient: f64) -> Option<Var> {
        let mut total: Option<Var> = None;
        for (p, &v) in self.params.iter().zip(bound) {
            let s = tape.sum_squares(v, p.frozen_row);
            total = Some(match total {
                None => s,
                Some(t) => tape.add(t, s).expect("scalar add"),
            });
        }
        total.map(|t| tape.scale(t, coefficient))
    }
}

pub fn uniform(rng: &mut impl Rng, shape: &[usize], bound: f64) -> Tensor {
    let n = shape.iter().product();
    let values = (0..n).map(|_| rng.gen_range(-bound..=bound)).collect();
    Tensor::new(shape, values).expect("valid init shape")
}

/// Glorot/Xavier uniform over a `fan_out × fan_in` matrix.
pub fn glorot(rng: &mut impl Rng, shape: &[usize], fan_in: usize, fan_out: usize) -> Tensor {
    uniform(rng, shape, (6.0 / (fan_in + fan_out) as f64).sqrt())
}
