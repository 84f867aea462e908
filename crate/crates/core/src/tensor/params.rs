use rand::Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::{AdamState, Gradients, Tape, Tensor, Var};

/// Index of a parameter inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

/// Named, ordered collection of trainable tensors.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<T> {
    names: Vec<String>,
    values: Vec<Tensor<T>>,
    regularized: Vec<bool>,
}

/// A [`ParamStore`] bound to a tape for one forward pass.
#[derive(Clone, Debug)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            values: Vec::new(),
            regularized: Vec::new(),
        }
    }

    /// Registers a tensor. `regularize` marks it as part of the Frobenius
    /// penalty.
    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>, regularize: bool) -> ParamId {
        self.names.push(name.into());
        self.values.push(value);
        self.regularized.push(regularize);
        ParamId(self.values.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.values[id.0]
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn is_regularized(&self, id: ParamId) -> bool {
        self.regularized[id.0]
    }

    pub fn values(&self) -> &[Tensor<T>] {
        &self.values
    }

    pub fn shapes(&self) -> Vec<(usize, usize)> {
        self.values.iter().map(Tensor::shape).collect()
    }

    /// Replaces a tensor by name, keeping the shape contract.
    pub fn set(&mut self, name: &str, value: Tensor<T>) -> Result<()> {
        let id = self
            .find(name)
            .ok_or_else(|| Error::Config(format!("unknown parameter `{name}`")))?;
        if self.values[id.0].shape() != value.shape() {
            return Err(Error::dim(
                "ParamStore::set",
                format!(
                    "`{name}` is {:?}, got {:?}",
                    self.values[id.0].shape(),
                    value.shape()
                ),
            ));
        }
        self.values[id.0] = value;
        Ok(())
    }

    /// Records every tensor on `tape` as a trainable leaf.
    pub fn bind(&self, tape: &mut Tape<T>) -> Bound {
        Bound {
            vars: self.values.iter().map(|v| tape.param(v.clone())).collect(),
        }
    }

    /// Records every tensor as a constant (inference only).
    pub fn bind_frozen(&self, tape: &mut Tape<T>) -> Bound {
        Bound {
            vars: self
                .values
                .iter()
                .map(|v| tape.constant(v.clone()))
                .collect(),
        }
    }

    /// `Σ ‖θ‖²_F` over regularized parameters, recorded on the tape.
    pub fn frobenius_penalty(&self, tape: &mut Tape<T>, bound: &Bound) -> Result<Var> {
        self.frobenius_penalty_except(tape, bound, &[])
    }

    /// As [`Self::frobenius_penalty`], leaving out `excluded`.
    pub fn frobenius_penalty_except(
        &self,
        tape: &mut Tape<T>,
        bound: &Bound,
        excluded: &[ParamId],
    ) -> Result<Var> {
        let mut total: Option<Var> = None;
        for id in self
            .ids()
            .filter(|&id| self.is_regularized(id) && !excluded.contains(&id))
        {
            let sq = tape.sum_squares(bound.var(id));
            total = Some(match total {
                Some(t) => tape.add(t, sq)?,
                None => sq,
            });
        }
        Ok(total.unwrap_or_else(|| tape.constant(Tensor::scalar(T::zero()))))
    }

    /// Gradients for every parameter in store order; zeros where none flowed.
    pub fn collect_grads(&self, grads: &Gradients<T>, bound: &Bound) -> Vec<Tensor<T>> {
        self.ids()
            .map(|id| grads.get_or_zeros(bound.var(id), self.get(id).shape()))
            .collect()
    }

    pub fn adam(&self) -> AdamState<T> {
        AdamState::new(self.shapes())
    }

    pub fn apply_adam(&mut self, state: &mut AdamState<T>, grads: &[Tensor<T>], lr: T) {
        state.step(&mut self.values, grads, lr);
    }
}

/// Xavier/Glorot uniform initialization on `[-a, a]`,
/// `a = sqrt(6 / (fan_in + fan_out))`.
pub fn xavier_uniform<T: Scalar, R: Rng + ?Sized>(
    rows: usize,
    cols: usize,
    rng: &mut R,
) -> Tensor<T> {
    let a = (6.0 / (rows + cols).max(1) as f64).sqrt();
    Tensor::from_fn(rows, cols, |_, _| T::of(rng.gen_range(-a..=a)))
}
