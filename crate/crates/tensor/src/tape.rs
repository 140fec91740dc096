//! Wengert tape: every forward op appends a node holding its value and the
//! data its backward rule needs; `backward` replays the nodes in reverse.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use crate::error::{Result, TensorError};
use crate::kernels::conv::ConvGeom;
use crate::tensor::{Scalar, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Mode {
    Train,
    Infer,
}

impl Mode {
    pub fn is_train(self) -> bool {
        matches!(self, Mode::Train)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Padding {
    Same,
    Valid,
}

#[derive(Debug)]
pub(crate) enum Op<T> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Relu(Var),
    Gelu(Var),
    Sigmoid(Var),
    Conv2d {
        x: Var,
        kernel: Var,
        bias: Option<Var>,
        geom: ConvGeom,
    },
    Depthwise {
        x: Var,
        kernel: Var,
        k: usize,
    },
    /// Shared by batch and layer norm. `inv_std` holds one entry per channel
    /// (batch norm) or per row (layer norm).
    Norm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
        kind: NormKind,
    },
    MaxPool2 {
        x: Var,
        argmax: Vec<usize>,
    },
    Upsample2(Var),
    GlobalAvgPool(Var),
    BroadcastSpatial {
        x: Var,
    },
    ExpandLast {
        x: Var,
    },
    SliceLast {
        x: Var,
        start: usize,
    },
    ConcatLast(Var, Var),
    PermuteLast {
        x: Var,
        perm: Vec<usize>,
    },
    Reshape(Var),
    Transpose(Var),
    MatMul(Var, Var),
    Softmax(Var),
    Dropout {
        x: Var,
        mask: Vec<T>,
    },
    Sum(Var),
    Mean(Var),
    Bce {
        p: Var,
        g: Var,
        clamp: T,
    },
    Jaccard {
        p: Var,
        g: Var,
        eps: T,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum NormKind {
    /// Normalized with batch statistics (gradient flows through them).
    BatchTrain,
    /// Normalized with fixed statistics (running stats).
    Fixed,
    /// Per-row statistics over the last axis.
    Layer,
}

pub(crate) struct Node<T> {
    pub(crate) value: Tensor<T>,
    pub(crate) op: Op<T>,
    pub(crate) requires_grad: bool,
    pub(crate) grad: Option<Tensor<T>>,
}

/// Single-threaded recording of one forward pass.
pub struct Tape<T> {
    pub(crate) nodes: Vec<Node<T>>,
    flops: u64,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            flops: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Forward FLOPs recorded so far (multiply-add counted as 2).
    pub fn flops(&self) -> u64 {
        self.flops
    }

    /// Leaf node; gradients accumulate into it when `requires_grad`.
    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
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

    /// Accumulated gradient of a leaf, if any backward pass reached it.
    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    pub(crate) fn data(&self, v: Var) -> &[T] {
        self.nodes[v.0].value.data()
    }

    pub(crate) fn push(
        &mut self,
        name: &'static str,
        value: Tensor<T>,
        op: Op<T>,
        inputs: &[Var],
        flops: u64,
    ) -> Result<Var> {
        if !value.all_finite() {
            return Err(TensorError::NonFinite { op: name });
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.flops += flops;
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Reverse sweep from a scalar `loss`. Leaf gradients are added to any
    /// gradient already stored, so repeated calls accumulate until
    /// [`Tape::zero_grad`].
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.nodes.is_empty() {
            return Err(TensorError::EmptyTape);
        }
        let loss_node = &self.nodes[loss.0];
        if loss_node.value.numel() != 1 {
            return Err(TensorError::NonScalarLoss(loss_node.value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![T::one()]);
        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            if !self.nodes[id].requires_grad {
                continue;
            }
            if let Op::Leaf = self.nodes[id].op {
                let node = &mut self.nodes[id];
                match &mut node.grad {
                    Some(acc) => acc.data_mut().iter_mut().zip(&g).for_each(|(a, b)| *a += *b),
                    None => node.grad = Some(Tensor::new(node.value.shape().to_vec(), g)?),
                }
                continue;
            }
            for (input, contrib) in crate::grad::backward_op(self, id, &g) {
                if !self.nodes[input.0].requires_grad {
                    continue;
                }
                debug_assert_eq!(contrib.len(), self.nodes[input.0].value.numel());
                match &mut grads[input.0] {
                    Some(acc) => acc.iter_mut().zip(&contrib).for_each(|(a, b)| *a += *b),
                    slot => *slot = Some(contrib),
                }
            }
        }
        for node in &self.nodes {
            if let Some(g) = &node.grad {
                if !g.all_finite() {
                    return Err(TensorError::NonFinite { op: "backward" });
                }
            }
        }
        Ok(())
    }

    /// Hash of every piecewise branch taken in this forward pass: ReLU signs,
    /// max-pool argmax choices and probability clamps. Two passes with equal
    /// signatures lie on the same smooth piece of the computed function.
    pub fn kink_signature(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for node in &self.nodes {
            match &node.op {
                Op::Relu(x) => {
                    for v in self.data(*x) {
                        (*v > T::zero()).hash(&mut h);
                    }
                }
                Op::MaxPool2 { argmax, .. } => argmax.hash(&mut h),
                Op::Bce { p, clamp, .. } => {
                    let hi = T::one() - *clamp;
                    for v in self.data(*p) {
                        (*v < *clamp, *v > hi).hash(&mut h);
                    }
                }
                Op::Sigmoid(_) => {
                    let (lo, hi) = crate::ops::activation::sigmoid_bounds::<T>();
                    for v in node.value.data() {
                        (*v <= lo, *v >= hi).hash(&mut h);
                    }
                }
                _ => {}
            }
        }
        h.finish()
    }
}
