use std::cell::{Ref, RefCell};
use std::fmt;
use std::rc::Rc;

use super::ops::Op;
use super::Tensor;
use crate::error::{Error, Result};

pub(crate) struct Node {
    pub(crate) value: Rc<Tensor>,
    pub(crate) op: Op,
    pub(crate) requires_grad: bool,
    pub(crate) grad: Option<Vec<f64>>,
}

/// Records primitives in execution order so gradients can be replayed in
/// reverse. Nodes are appended only after their inputs, so the node list is
/// always a topological order.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a tensor recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    pub(crate) tape: &'t Tape,
    pub(crate) id: usize,
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

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn leaf(&self, value: Tensor, requires_grad: bool) -> Var<'_> {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.leaf(value, false)
    }

    pub fn variable(&self, value: Tensor) -> Var<'_> {
        self.leaf(value, true)
    }

    pub(crate) fn push(&self, value: Tensor, op: Op, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        let id = nodes.len();
        debug_assert!(op.inputs().iter().all(|&i| i < id));
        nodes.push(Node {
            value: Rc::new(value),
            op,
            requires_grad,
            grad: None,
        });
        Var { tape: self, id }
    }

    pub(crate) fn nodes(&self) -> Ref<'_, Vec<Node>> {
        self.nodes.borrow()
    }

    pub(crate) fn value_of(&self, id: usize) -> Rc<Tensor> {
        Rc::clone(&self.nodes.borrow()[id].value)
    }

    pub(crate) fn requires_grad_of(&self, id: usize) -> bool {
        self.nodes.borrow()[id].requires_grad
    }

    /// The branch taken by every non-smooth primitive recorded so far: one
    /// entry per ReLU input element (1 when it was cut) and per max-pool
    /// output (the winning index). Two evaluations with equal patterns lie
    /// on the same smooth piece of the function.
    pub fn branch_pattern(&self) -> Vec<usize> {
        let nodes = self.nodes.borrow();
        let mut out = Vec::new();
        for node in nodes.iter() {
            match &node.op {
                Op::Relu { x } => out.extend(nodes[*x].value.data().iter().map(|&v| usize::from(v < 0.0))),
                Op::MaxPoolLength { argmax, .. } => out.extend_from_slice(argmax),
                _ => {}
            }
        }
        out
    }

    /// Clears every accumulated gradient.
    pub fn zero_grad(&self) {
        for node in self.nodes.borrow_mut().iter_mut() {
            node.grad = None;
        }
    }

    /// Propagates d(loss)/d(node) to every node that requires a gradient.
    ///
    /// Gradients accumulate into existing buffers; call [`Tape::zero_grad`]
    /// between steps when that is not wanted.
    pub fn backward(&self, loss: Var<'_>) -> Result<()> {
        if !std::ptr::eq(loss.tape, self) {
            return Err(Error::contract("loss belongs to a different tape"));
        }
        let nodes = self.nodes.borrow();
        if nodes[loss.id].value.numel() != 1 {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                nodes[loss.id].value.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.id + 1];
        grads[loss.id] = Some(vec![1.0]);
        for id in (0..=loss.id).rev() {
            let node = &nodes[id];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            node.op.backward(&node.value, &g, &nodes, &mut |input, contribution| {
                if !nodes[input].requires_grad {
                    return;
                }
                match &mut grads[input] {
                    Some(acc) => acc.iter_mut().zip(&contribution).for_each(|(a, c)| *a += c),
                    slot @ None => *slot = Some(contribution),
                }
            });
            grads[id] = Some(g);
        }
        drop(nodes);
        let mut nodes = self.nodes.borrow_mut();
        for (node, g) in nodes.iter_mut().zip(grads) {
            let Some(g) = g else { continue };
            match &mut node.grad {
                Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, v)| *a += v),
                slot @ None => *slot = Some(g),
            }
        }
        Ok(())
    }
}

impl<'t> Var<'t> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn value(&self) -> Rc<Tensor> {
        self.tape.value_of(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes()[self.id].value.shape().to_vec()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.requires_grad_of(self.id)
    }

    /// Accumulated gradient, if backward reached this node.
    pub fn grad(&self) -> Option<Vec<f64>> {
        self.tape.nodes()[self.id].grad.clone()
    }
}
