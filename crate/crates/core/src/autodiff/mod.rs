//! Define-by-run reverse-mode automatic differentiation.
//!
//! Every operation on a [`Var`] evaluates eagerly and appends one node to
//! its [`Tape`]. Nodes are only ever appended after their inputs, so the
//! node order is a topological order and [`Tape::backward`] is a single
//! reverse sweep that visits each node once.

mod backward;
mod check;
mod ops;

use std::cell::RefCell;
use std::rc::Rc;

pub use check::{grad_check, grad_check_many, numeric_gradient};
pub use ops::{concat, select, IndexMap};

use crate::error::{Error, Result};
use crate::nn::Padding;
use crate::tensor::{Float, Tensor};

/// The recorded operation that produced a node, with whatever the backward
/// rule needs beyond the input and output values.
#[derive(Debug)]
pub(crate) enum Op<T: Float> {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    /// `a + b` where `b`'s shape is a suffix of `a`'s.
    AddBroadcast(usize, usize),
    Scale(usize, T),
    MatMul {
        a: usize,
        b: usize,
        batch: usize,
        a_batched: bool,
        b_batched: bool,
        m: usize,
        k: usize,
        n: usize,
    },
    Reshape(usize),
    Permute(usize, Vec<usize>),
    Softmax {
        x: usize,
        outer: usize,
        len: usize,
        inner: usize,
    },
    Relu(usize),
    Gelu(usize),
    LayerNorm {
        x: usize,
        gamma: usize,
        beta: usize,
        xhat: Vec<T>,
        rstd: Vec<T>,
    },
    DepthwiseConv {
        x: usize,
        kernel: usize,
        geom: ConvGeom,
    },
    Concat {
        inputs: Vec<usize>,
        outer: usize,
        inner: usize,
        sizes: Vec<usize>,
    },
    Slice {
        x: usize,
        outer: usize,
        inner: usize,
        axis_len: usize,
        start: usize,
        len: usize,
    },
    Expand {
        x: usize,
        times: usize,
    },
    Mean {
        x: usize,
        outer: usize,
        len: usize,
        inner: usize,
    },
    Sum(usize),
    Gather {
        x: usize,
        index: Rc<IndexMap>,
    },
    Scatter {
        x: usize,
        index: Rc<IndexMap>,
    },
    CrossEntropy {
        logits: usize,
        probs: Vec<T>,
        targets: Vec<usize>,
        smoothing: f64,
    },
    Select {
        mask: Rc<Vec<bool>>,
        a: usize,
        b: usize,
        inner: usize,
    },
}

/// Geometry of a channels-last depthwise convolution.
#[derive(Clone, Debug)]
pub(crate) struct ConvGeom {
    pub batch: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub out_h: usize,
    pub out_w: usize,
    pub channels: usize,
    pub k: usize,
    pub padding: Padding,
}

pub(crate) struct Node<T: Float> {
    pub value: Rc<Tensor<T>>,
    pub op: Op<T>,
    pub requires_grad: bool,
}

/// Ordered record of every operation evaluated in one forward pass.
pub struct Tape<T: Float> {
    nodes: RefCell<Vec<Node<T>>>,
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t, T: Float> {
    pub(crate) tape: &'t Tape<T>,
    pub(crate) id: usize,
}

impl<T: Float> std::fmt::Debug for Var<'_, T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var#{}{:?}", self.id, self.shape())
    }
}

impl<T: Float> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Float> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: RefCell::new(Vec::new()),
        }
    }

    /// A differentiable input.
    pub fn leaf(&self, value: Tensor<T>) -> Var<'_, T> {
        self.push(value, Op::Leaf, true)
    }

    /// A non-differentiable input.
    pub fn constant(&self, value: Tensor<T>) -> Var<'_, T> {
        self.push(value, Op::Leaf, false)
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub(crate) fn push(&self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var<'_, T> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value: Rc::new(value),
            op,
            requires_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    pub(crate) fn value_of(&self, id: usize) -> Rc<Tensor<T>> {
        Rc::clone(&self.nodes.borrow()[id].value)
    }

    pub(crate) fn requires_grad(&self, id: usize) -> bool {
        self.nodes.borrow()[id].requires_grad
    }

    /// Reverse sweep from a scalar root. Gradients are accumulated (summed)
    /// over every path into a node, and returned for every differentiable
    /// leaf that the root depends on.
    pub fn backward(&self, root: Var<'_, T>) -> Result<Gradients<T>> {
        if !std::ptr::eq(root.tape, self) {
            return Err(Error::contract("backward root belongs to a different tape"));
        }
        let nodes = self.nodes.borrow();
        let root_val = &nodes[root.id].value;
        if root_val.numel() != 1 {
            return Err(Error::contract(format!(
                "backward requires a scalar root, got shape {:?}",
                root_val.shape()
            )));
        }
        let mut pending: Vec<Option<Vec<T>>> = vec![None; root.id + 1];
        let mut leaves: Vec<Option<Tensor<T>>> = vec![None; root.id + 1];
        pending[root.id] = Some(vec![T::one()]);
        for id in (0..=root.id).rev() {
            let Some(grad) = pending[id].take() else { continue };
            let node = &nodes[id];
            if !node.requires_grad {
                continue;
            }
            if let Op::Leaf = node.op {
                leaves[id] = Some(Tensor::new(node.value.shape().to_vec(), grad)?);
                continue;
            }
            backward::propagate(&nodes, id, &grad, &mut pending);
        }
        Ok(Gradients { grads: leaves })
    }
}

/// Leaf gradients produced by [`Tape::backward`].
pub struct Gradients<T: Float> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Float> Gradients<T> {
    pub fn get(&self, var: Var<'_, T>) -> Option<&Tensor<T>> {
        self.grads.get(var.id).and_then(|g| g.as_ref())
    }

    /// Gradient with respect to `var`, or zeros when the root does not depend on it.
    pub fn wrt(&self, var: Var<'_, T>) -> Tensor<T> {
        self.get(var)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(var.shape()))
    }
}

impl<'t, T: Float> Var<'t, T> {
    pub fn value(&self) -> Rc<Tensor<T>> {
        self.tape.value_of(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].value.shape().to_vec()
    }

    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.requires_grad(self.id)
    }
}
