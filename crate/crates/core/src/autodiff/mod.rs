//! Define-by-run reverse-mode automatic differentiation.
//!
//! A [`Tape`] records every primitive applied during a forward pass. Values
//! are immutable once recorded; [`Tape::backward`] walks the recording in
//! reverse and stores gradients on every node that requires them. A fresh
//! tape is built for every forward pass.

mod kernels;
mod ops;

use std::cell::{Ref, RefCell};
use std::fmt;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub use kernels::bilinear_taps;
pub use ops::concat;
use ops::Op;

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
}

/// Recording of primitive applications in topological order.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Var#{}{:?}", self.id, self.shape())
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Records a trainable input.
    pub fn leaf(&self, value: Tensor) -> Var<'_> {
        self.push_unchecked(value, Op::Leaf, true)
    }

    /// Records an input that never receives a gradient.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push_unchecked(value, Op::Leaf, false)
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push_unchecked(&self, value: Tensor, op: Op, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value, op, requires_grad, grad: None });
        Var { tape: self, id: nodes.len() - 1 }
    }

    fn push(&self, value: Tensor, op: Op) -> Result<Var<'_>> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op: op.name() });
        }
        let requires_grad = {
            let nodes = self.nodes.borrow();
            op.inputs().iter().any(|&i| nodes[i].requires_grad)
        };
        Ok(self.push_unchecked(value, op, requires_grad))
    }

    /// Back-propagates from a one-element `loss`, storing gradients on
    /// every node that requires one. Existing gradients are overwritten.
    pub fn backward(&self, loss: Var<'_>) -> Result<()> {
        let mut nodes = self.nodes.borrow_mut();
        let numel = nodes[loss.id].value.numel();
        if numel != 1 {
            return Err(Error::contract(format!("backward needs a scalar loss, got shape {:?}", nodes[loss.id].value.shape())));
        }
        for node in nodes.iter_mut() {
            node.grad = None;
        }
        if !nodes[loss.id].requires_grad {
            return Ok(());
        }
        nodes[loss.id].grad = Some(vec![1.0]);
        for id in (0..=loss.id).rev() {
            let Some(grad) = nodes[id].grad.take() else { continue };
            if !nodes[id].requires_grad {
                nodes[id].grad = Some(grad);
                continue;
            }
            let contributions = {
                let view: &[Node] = &nodes;
                let node = &view[id];
                node.op.backward(&grad, &node.value, |i| &view[i].value, |i| view[i].requires_grad)
            };
            for (input, delta) in contributions {
                let slot = &mut nodes[input].grad;
                match slot {
                    Some(acc) => acc.iter_mut().zip(&delta).for_each(|(a, d)| *a += d),
                    None => *slot = Some(delta),
                }
            }
            nodes[id].grad = Some(grad);
        }
        Ok(())
    }
}

impl<'t> Var<'t> {
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn value(&self) -> Ref<'t, Tensor> {
        Ref::map(self.tape.nodes.borrow(), |n| &n[self.id].value)
    }

    pub fn to_tensor(&self) -> Tensor {
        self.value().clone()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value().shape().to_vec()
    }

    /// The value of a one-element variable.
    pub fn item(&self) -> Result<f64> {
        self.value().item()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.nodes.borrow()[self.id].requires_grad
    }

    /// Gradient stored by the last [`Tape::backward`] call, if any.
    pub fn grad(&self) -> Option<Tensor> {
        let nodes = self.tape.nodes.borrow();
        let node = &nodes[self.id];
        node.grad.as_ref().map(|g| Tensor::from_parts(node.value.shape().to_vec(), g.clone()))
    }
}
