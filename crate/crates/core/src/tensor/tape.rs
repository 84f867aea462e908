//! Reverse-mode differentiation over dense matrices.
//!
//! A [`Tape`] records every operation of a forward pass in execution order,
//! which is already a topological order of the computation graph. Calling
//! [`Tape::backward`] walks the record once in reverse and accumulates
//! gradients into every node that depends on a trainable leaf.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::scalar::{sigmoid, softplus, Scalar};

use super::{CsrMatrix, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    MatMulT(Var, Var),
    SpMM(Arc<CsrMatrix<T>>, Var),
    Add(Var, Var),
    Sub(Var, Var),
    AddRow(Var, Var),
    Scale(Var, T),
    ScaleRows(Var, Arc<Vec<T>>),
    PRelu(Var, Var),
    Relu(Var),
    Sigmoid(Var),
    Softplus(Var),
    ConcatCols(Var, Var),
    GatherRows(Var, Arc<Vec<usize>>),
    Sum(Var),
    SumSquares(Var),
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Trainable leaf: gradients are accumulated for it.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Constant leaf: no gradient flows into it.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn check_same(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::dim(
                op,
                format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            ));
        }
        Ok(())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::MatMul(a, b), rg))
    }

    /// `a · bᵀ`.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul_t(self.value(b))?;
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::MatMulT(a, b), rg))
    }

    /// Sparse constant times dense variable.
    pub fn spmm(&mut self, s: &Arc<CsrMatrix<T>>, x: Var) -> Result<Var> {
        let value = s.matmul_dense(self.value(x))?;
        let rg = self.needs(x);
        Ok(self.push(value, Op::SpMM(Arc::clone(s), x), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same("add", a, b)?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x + y);
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same("sub", a, b)?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x - y);
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::Sub(a, b), rg))
    }

    /// Adds a `1 x c` row vector to every row of `x`.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (r, c) = self.shape(x);
        if self.shape(bias) != (1, c) {
            return Err(Error::dim(
                "add_row",
                format!("{:?} + {:?}", (r, c), self.shape(bias)),
            ));
        }
        let b = self.value(bias).as_slice().to_vec();
        let mut value = self.value(x).clone();
        for i in 0..r {
            for (o, &bj) in value.row_mut(i).iter_mut().zip(&b) {
                *o += bj;
            }
        }
        let rg = self.needs(x) || self.needs(bias);
        Ok(self.push(value, Op::AddRow(x, bias), rg))
    }

    pub fn scale(&mut self, x: Var, s: T) -> Var {
        let value = self.value(x).scale(s);
        let rg = self.needs(x);
        self.push(value, Op::Scale(x, s), rg)
    }

    /// Multiplies row `i` of `x` by `factors[i]`.
    pub fn scale_rows(&mut self, x: Var, factors: &Arc<Vec<T>>) -> Result<Var> {
        let (r, _) = self.shape(x);
        if factors.len() != r {
            return Err(Error::dim(
                "scale_rows",
                format!("{} factors for {r} rows", factors.len()),
            ));
        }
        let mut value = self.value(x).clone();
        for (i, &f) in factors.iter().enumerate() {
            for o in value.row_mut(i) {
                *o *= f;
            }
        }
        let rg = self.needs(x);
        Ok(self.push(value, Op::ScaleRows(x, Arc::clone(factors)), rg))
    }

    /// `max(x, 0) + slope · min(x, 0)` with a learnable `1 x 1` slope.
    pub fn prelu(&mut self, x: Var, slope: Var) -> Result<Var> {
        if self.shape(slope) != (1, 1) {
            return Err(Error::dim("prelu", "slope must be 1x1"));
        }
        let a = self.value(slope).item();
        let value = self.value(x).map(|v| if v > T::zero() { v } else { a * v });
        let rg = self.needs(x) || self.needs(slope);
        Ok(self.push(value, Op::PRelu(x, slope), rg))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| v.max(T::zero()));
        let rg = self.needs(x);
        self.push(value, Op::Relu(x), rg)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let value = self.value(x).map(sigmoid);
        let rg = self.needs(x);
        self.push(value, Op::Sigmoid(x), rg)
    }

    /// `ln(1 + e^x)`; `softplus(-z)` is `-ln σ(z)`.
    pub fn softplus(&mut self, x: Var) -> Var {
        let value = self.value(x).map(softplus);
        let rg = self.needs(x);
        self.push(value, Op::Softplus(x), rg)
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).concat_cols(self.value(b))?;
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::ConcatCols(a, b), rg))
    }

    pub fn gather_rows(&mut self, x: Var, index: &Arc<Vec<usize>>) -> Result<Var> {
        let value = self.value(x).gather_rows(index)?;
        let rg = self.needs(x);
        Ok(self.push(value, Op::GatherRows(x, Arc::clone(index)), rg))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let value = Tensor::scalar(self.value(x).sum());
        let rg = self.needs(x);
        self.push(value, Op::Sum(x), rg)
    }

    pub fn sum_squares(&mut self, x: Var) -> Var {
        let value = Tensor::scalar(self.value(x).sum_squares());
        let rg = self.needs(x);
        self.push(value, Op::SumSquares(x), rg)
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if self.shape(loss) != (1, 1) {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = Vec::with_capacity(self.nodes.len());
        grads.resize_with(self.nodes.len(), || None);
        grads[loss.0] = Some(Tensor::scalar(T::one()));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.propagate(node, &g, &mut grads)?;
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn propagate(
        &self,
        node: &Node<T>,
        g: &Tensor<T>,
        grads: &mut [Option<Tensor<T>>],
    ) -> Result<()> {
        let mut acc = |v: Var, t: Tensor<T>| {
            if !self.needs(v) {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&t),
                slot @ None => *slot = Some(t),
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.needs(*a) {
                    acc(*a, g.matmul_t(self.value(*b))?);
                }
                if self.needs(*b) {
                    acc(*b, self.value(*a).t_matmul(g)?);
                }
            }
            Op::MatMulT(a, b) => {
                if self.needs(*a) {
                    acc(*a, g.matmul(self.value(*b))?);
                }
                if self.needs(*b) {
                    acc(*b, g.t_matmul(self.value(*a))?);
                }
            }
            Op::SpMM(s, x) => acc(*x, s.t_matmul_dense(g)?),
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.scale(-T::one()));
            }
            Op::AddRow(x, bias) => {
                acc(*x, g.clone());
                if self.needs(*bias) {
                    let mut col = Tensor::zeros(1, g.cols());
                    for i in 0..g.rows() {
                        for (o, &v) in col.as_mut_slice().iter_mut().zip(g.row(i)) {
                            *o += v;
                        }
                    }
                    acc(*bias, col);
                }
            }
            Op::Scale(x, s) => acc(*x, g.scale(*s)),
            Op::ScaleRows(x, factors) => {
                let mut out = g.clone();
                for (i, &f) in factors.iter().enumerate() {
                    for o in out.row_mut(i) {
                        *o *= f;
                    }
                }
                acc(*x, out);
            }
            Op::PRelu(x, slope) => {
                let a = self.value(*slope).item();
                let xv = self.value(*x);
                if self.needs(*x) {
                    acc(
                        *x,
                        xv.zip_map(g, |v, gv| if v > T::zero() { gv } else { a * gv }),
                    );
                }
                if self.needs(*slope) {
                    let ds: T = xv
                        .as_slice()
                        .iter()
                        .zip(g.as_slice())
                        .filter(|(&v, _)| v <= T::zero())
                        .map(|(&v, &gv)| v * gv)
                        .sum();
                    acc(*slope, Tensor::scalar(ds));
                }
            }
            Op::Relu(x) => acc(
                *x,
                self.value(*x)
                    .zip_map(g, |v, gv| if v > T::zero() { gv } else { T::zero() }),
            ),
            Op::Sigmoid(x) => acc(*x, node.value.zip_map(g, |y, gv| gv * y * (T::one() - y))),
            Op::Softplus(x) => acc(*x, self.value(*x).zip_map(g, |v, gv| gv * sigmoid(v))),
            Op::ConcatCols(a, b) => {
                let ca = self.shape(*a).1;
                let cb = self.shape(*b).1;
                if self.needs(*a) {
                    acc(*a, g.slice_cols(0, ca)?);
                }
                if self.needs(*b) {
                    acc(*b, g.slice_cols(ca, cb)?);
                }
            }
            Op::GatherRows(x, index) => {
                let (r, c) = self.shape(*x);
                let mut out = Tensor::zeros(r, c);
                for (k, &i) in index.iter().enumerate() {
                    for (o, &v) in out.row_mut(i).iter_mut().zip(g.row(k)) {
                        *o += v;
                    }
                }
                acc(*x, out);
            }
            Op::Sum(x) => {
                let (r, c) = self.shape(*x);
                acc(*x, Tensor::filled(r, c, g.item()));
            }
            Op::SumSquares(x) => {
                let two_g = g.item() + g.item();
                acc(*x, self.value(*x).scale(two_g));
            }
        }
        Ok(())
    }
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient of `v`, or zeros of `shape` when nothing flowed into it.
    pub fn get_or_zeros(&self, v: Var, shape: (usize, usize)) -> Tensor<T> {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(shape.0, shape.1))
    }
}
