//! Reverse-mode automatic differentiation over a recorded tape.
//!
//! A [`Graph`] records every forward operation in creation order, which is a
//! topological order by construction. [`Graph::backward`] walks it in reverse
//! once; a graph cannot be differentiated twice.
//!
//! Parameters are borrowed into the graph, so running inference on a large
//! model never copies weights.

mod gradcheck;
mod ops;

use std::borrow::Cow;

pub use gradcheck::{grad_check, relative_error};
pub use ops::BatchStats;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

use ops::Op;

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

struct Node<'a, T: Scalar> {
    value: Cow<'a, Tensor<T>>,
    op: Op<T>,
    requires_grad: bool,
}

pub struct Graph<'a, T: Scalar = f32> {
    nodes: Vec<Node<'a, T>>,
    grads: Vec<Option<Vec<T>>>,
    consumed: bool,
}

impl<T: Scalar> Default for Graph<'_, T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'a, T: Scalar> Graph<'a, T> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            grads: Vec::new(),
            consumed: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Adds an owned input tensor.
    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.push(Cow::Owned(value), Op::Leaf, requires_grad)
    }

    /// Adds a borrowed trainable parameter.
    pub fn param(&mut self, value: &'a Tensor<T>) -> Var {
        self.push(Cow::Borrowed(value), Op::Leaf, true)
    }

    /// Adds a borrowed tensor that never receives a gradient.
    pub fn constant(&mut self, value: &'a Tensor<T>) -> Var {
        self.push(Cow::Borrowed(value), Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient accumulated into `v` by [`Graph::backward`], if any reached it.
    pub fn grad(&self, v: Var) -> Option<Tensor<T>> {
        let data = self.grads.get(v.0)?.as_ref()?;
        Some(Tensor::new(self.shape(v).to_vec(), data.clone()).expect("grad shape"))
    }

    pub fn grad_slice(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0)?.as_deref()
    }

    fn push(&mut self, value: Cow<'a, Tensor<T>>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push_op(&mut self, value: Tensor<T>, op: Op<T>) -> Var {
        let requires_grad = op.inputs().iter().any(|v| self.nodes[v.0].requires_grad);
        self.push(Cow::Owned(value), op, requires_grad)
    }

    /// Propagates gradients from a scalar `loss` to every node that requires
    /// one. Leaf gradients accumulate with `+=`.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.consumed {
            return Err(Error::Usage(
                "backward called twice on the same graph; build a new graph per step".into(),
            ));
        }
        if self.value(loss).numel() != 1 {
            return Err(Error::Usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        self.consumed = true;
        self.grads = (0..self.nodes.len()).map(|_| None).collect();
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        self.grads[loss.0] = Some(vec![T::one()]);

        for idx in (0..=loss.0).rev() {
            if !self.nodes[idx].requires_grad {
                continue;
            }
            let Some(upstream) = self.grads[idx].take() else {
                continue;
            };
            self.backward_node(idx, &upstream);
            self.grads[idx] = Some(upstream);
        }
        Ok(())
    }

    /// Gradient buffer for `v`, allocated on first use; `None` when `v`
    /// does not take part in differentiation.
    fn grad_buf<'g>(
        grads: &'g mut [Option<Vec<T>>],
        nodes: &[Node<'a, T>],
        v: Var,
    ) -> Option<&'g mut Vec<T>> {
        if !nodes[v.0].requires_grad {
            return None;
        }
        let n = nodes[v.0].value.numel();
        Some(grads[v.0].get_or_insert_with(|| vec![T::zero(); n]))
    }
}

#[cfg(test)]
mod tests;
