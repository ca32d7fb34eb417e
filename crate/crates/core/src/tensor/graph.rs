use std::cell::RefCell;
use std::fmt;

use super::ops::{self, Op};
use super::{Real, Tensor};
use crate::error::{Error, Result};

pub(crate) struct Node<S> {
    pub(crate) value: Tensor<S>,
    pub(crate) op: Op<S>,
    pub(crate) requires_grad: bool,
}

/// Gradient tape. Nodes are appended in execution order, so every op's
/// inputs precede it. A graph is single-threaded; independent graphs may
/// run on separate threads.
pub struct Graph<S> {
    pub(crate) nodes: RefCell<Vec<Node<S>>>,
    grads: RefCell<Vec<Option<Vec<S>>>>,
}

impl<S: Real> Default for Graph<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S> fmt::Debug for Graph<S> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Graph")
            .field("nodes", &self.nodes.borrow().len())
            .finish()
    }
}

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy)]
pub struct Var<'g, S> {
    pub(crate) graph: &'g Graph<S>,
    pub(crate) id: usize,
}

impl<S> fmt::Debug for Var<'_, S> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Var({})", self.id)
    }
}

impl<S: Real> Graph<S> {
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
            grads: RefCell::new(Vec::new()),
        }
    }

    /// Registers a trainable leaf.
    pub fn leaf(&self, value: Tensor<S>) -> Var<'_, S> {
        self.push_raw(value, Op::Leaf, true)
    }

    /// Registers a leaf that never receives gradients.
    pub fn constant(&self, value: Tensor<S>) -> Var<'_, S> {
        self.push_raw(value, Op::Leaf, false)
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Clears every accumulated gradient.
    pub fn zero_grad(&self) {
        self.grads.borrow_mut().clear();
    }

    fn push_raw(&self, value: Tensor<S>, op: Op<S>, requires_grad: bool) -> Var<'_, S> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var {
            graph: self,
            id: nodes.len() - 1,
        }
    }

    /// Appends an op output. The node is differentiable when any input is.
    pub(crate) fn push(
        &self,
        name: &'static str,
        value: Tensor<S>,
        op: Op<S>,
        inputs: &[usize],
    ) -> Result<Var<'_, S>> {
        if !value.all_finite() {
            return Err(Error::Numeric(name));
        }
        let requires_grad = {
            let nodes = self.nodes.borrow();
            inputs.iter().any(|&i| nodes[i].requires_grad)
        };
        let op = if requires_grad { op } else { Op::Leaf };
        Ok(self.push_raw(value, op, requires_grad))
    }

    pub(crate) fn value(&self, id: usize) -> Tensor<S> {
        self.nodes.borrow()[id].value.clone()
    }

    fn backward_from(&self, root: usize) -> Result<()> {
        let nodes = self.nodes.borrow();
        if nodes[root].value.numel() != 1 {
            return Err(Error::contract(format!(
                "backward needs a scalar root, got shape {:?}",
                nodes[root].value.shape()
            )));
        }
        if !nodes[root].requires_grad {
            return Ok(());
        }
        let mut pending: Vec<Option<Vec<S>>> = vec![None; root + 1];
        pending[root] = Some(vec![S::one()]);
        let mut grads = self.grads.borrow_mut();
        if grads.len() < nodes.len() {
            grads.resize(nodes.len(), None);
        }
        for id in (0..=root).rev() {
            let Some(g) = pending[id].take() else {
                continue;
            };
            ops::backward(&nodes, id, &g, &mut |input, contribution| {
                if nodes[input].requires_grad {
                    accumulate(&mut pending[input], contribution);
                }
            });
            accumulate(&mut grads[id], g);
        }
        Ok(())
    }
}

fn accumulate<S: Real>(slot: &mut Option<Vec<S>>, g: Vec<S>) {
    match slot {
        Some(acc) => {
            for (a, b) in acc.iter_mut().zip(g) {
                *a += b;
            }
        }
        None => *slot = Some(g),
    }
}

impl<'g, S: Real> Var<'g, S> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn graph(&self) -> &'g Graph<S> {
        self.graph
    }

    pub fn value(&self) -> Tensor<S> {
        self.graph.value(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.graph.nodes.borrow()[self.id].value.shape().to_vec()
    }

    pub fn requires_grad(&self) -> bool {
        self.graph.nodes.borrow()[self.id].requires_grad
    }

    /// Scalar value of a one-element node.
    pub fn item(&self) -> S {
        self.graph.nodes.borrow()[self.id].value.item()
    }

    /// Accumulated gradient of the last backward passes, if any reached
    /// this node.
    pub fn grad(&self) -> Option<Tensor<S>> {
        let grads = self.graph.grads.borrow();
        let g = grads.get(self.id)?.as_ref()?;
        let shape = self.shape();
        Some(Tensor::from_parts(shape, g.clone()))
    }

    /// Reverse pass from this scalar node, accumulating into every
    /// differentiable node's gradient.
    pub fn backward(&self) -> Result<()> {
        self.graph.backward_from(self.id)
    }

    /// A non-differentiable copy of this node's value (stop-gradient).
    pub fn detach(&self) -> Var<'g, S> {
        self.graph.constant(self.value())
    }
}
