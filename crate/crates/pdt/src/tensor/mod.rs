//! Dense f64 tensors with reverse-mode gradient accumulation.
//!
//! The graph is define-by-run: every op records its parents and a backward
//! rule on the output tensor. Calling [`backward`] on a scalar replays the
//! tape in reverse topological order and accumulates gradients into every
//! `requires_grad` leaf.

mod backward;
pub(crate) mod kernels;
mod ops;
#[cfg(test)]
mod tests;

pub use ops::*;

use crate::error::{Error, Result};
use std::cell::{Cell, Ref, RefCell};
use std::collections::HashSet;
use std::rc::Rc;

thread_local! {
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
}

/// Run a closure with graph recording disabled (evaluation passes).
pub fn no_grad<T>(f: impl FnOnce() -> T) -> T {
    let prev = GRAD_ENABLED.with(|g| g.replace(false));
    let out = f();
    GRAD_ENABLED.with(|g| g.set(prev));
    out
}

pub(crate) fn grad_enabled() -> bool {
    GRAD_ENABLED.with(|g| g.get())
}

/// Reduction kinds for [`reduce`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReduceKind {
    Sum,
    Mean,
    Max,
}

/// Backward rule attached to a non-leaf tensor. Variants store only the
/// shape/config context; values are read back from parents at backward time.
#[derive(Debug)]
pub(crate) enum Op {
    Conv2d { stride: usize, padding: usize },
    AvgPool2d { k: usize, stride: usize, padding: usize },
    Relu,
    Sigmoid,
    Exp,
    /// y = sqrt(x + eps); backward reads y, so eps is not stored
    Sqrt,
    /// y = c * x
    Scale { c: f64 },
    /// y = x + c
    AddScalar,
    Add,
    Sub,
    Mul,
    Matmul,
    Transpose2d,
    Reshape,
    ConcatChannels { channels: Vec<usize> },
    ReduceSum { axes: Vec<usize> },
    ReduceMean { axes: Vec<usize>, count: usize },
    /// argmax holds, per output cell, the flat input index that won.
    ReduceMax { argmax: Vec<usize> },
    L2Normalize,
}

pub(crate) struct Node {
    pub op: Op,
    pub parents: Vec<Tensor>,
}

pub(crate) struct Inner {
    shape: Vec<usize>,
    data: RefCell<Vec<f64>>,
    grad: RefCell<Option<Vec<f64>>>,
    requires_grad: Cell<bool>,
    node: RefCell<Option<Node>>,
}

/// Shared handle to a tensor. Cloning is cheap (reference count).
#[derive(Clone)]
pub struct Tensor {
    inner: Rc<Inner>,
}

impl std::fmt::Debug for Tensor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.inner.shape)
            .field("requires_grad", &self.inner.requires_grad.get())
            .finish()
    }
}

impl Tensor {
    pub fn from_vec(shape: Vec<usize>, data: Vec<f64>) -> Result<Tensor> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::Dimension(format!(
                "shape {:?} implies {} elements, got {}",
                shape,
                numel,
                data.len()
            )));
        }
        Ok(Self::new_leaf(shape, data, false))
    }

    /// Leaf with `requires_grad = true` (a trainable parameter).
    pub fn param(shape: Vec<usize>, data: Vec<f64>) -> Result<Tensor> {
        let t = Self::from_vec(shape, data)?;
        t.inner.requires_grad.set(true);
        Ok(t)
    }

    pub fn zeros(shape: Vec<usize>) -> Tensor {
        let n = shape.iter().product();
        Self::new_leaf(shape, vec![0.0; n], false)
    }

    pub fn full(shape: Vec<usize>, v: f64) -> Tensor {
        let n = shape.iter().product();
        Self::new_leaf(shape, vec![v; n], false)
    }

    pub fn scalar(v: f64) -> Tensor {
        Self::new_leaf(vec![1], vec![v], false)
    }

    pub(crate) fn new_leaf(shape: Vec<usize>, data: Vec<f64>, requires_grad: bool) -> Tensor {
        Tensor {
            inner: Rc::new(Inner {
                shape,
                data: RefCell::new(data),
                grad: RefCell::new(None),
                requires_grad: Cell::new(requires_grad),
                node: RefCell::new(None),
            }),
        }
    }

    pub(crate) fn new_node(shape: Vec<usize>, data: Vec<f64>, op: Op, parents: Vec<Tensor>) -> Tensor {
        let track = grad_enabled() && parents.iter().any(|p| p.requires_grad());
        let t = Self::new_leaf(shape, data, track);
        if track {
            *t.inner.node.borrow_mut() = Some(Node { op, parents });
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.inner.shape
    }

    pub fn numel(&self) -> usize {
        self.inner.shape.iter().product()
    }

    pub fn data(&self) -> Ref<'_, Vec<f64>> {
        self.inner.data.borrow()
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.inner.data.borrow().clone()
    }

    /// Scalar value; panics if the tensor is not single-element.
    pub fn item(&self) -> f64 {
        assert_eq!(self.numel(), 1, "item() on non-scalar tensor");
        self.inner.data.borrow()[0]
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.requires_grad.get()
    }

    pub fn set_requires_grad(&self, v: bool) {
        self.inner.requires_grad.set(v);
    }

    pub fn grad(&self) -> Option<Vec<f64>> {
        self.inner.grad.borrow().clone()
    }

    pub fn has_grad(&self) -> bool {
        self.inner.grad.borrow().is_some()
    }

    pub fn zero_grad(&self) {
        *self.inner.grad.borrow_mut() = None;
    }

    /// Replace the values in place (optimizer update). The tensor must be a
    /// leaf; updating a graph node would silently corrupt later backwards.
    pub fn set_data(&self, data: Vec<f64>) {
        assert!(self.inner.node.borrow().is_none(), "set_data on a graph node");
        assert_eq!(data.len(), self.numel());
        *self.inner.data.borrow_mut() = data;
    }

    /// New leaf tensor sharing this tensor's values, cut off from the graph.
    pub fn detach(&self) -> Tensor {
        Self::new_leaf(self.inner.shape.clone(), self.to_vec(), false)
    }

    pub(crate) fn accumulate_grad(&self, contrib: &[f64]) {
        let mut g = self.inner.grad.borrow_mut();
        match g.as_mut() {
            Some(buf) => {
                for (a, b) in buf.iter_mut().zip(contrib) {
                    *a += b;
                }
            }
            None => *g = Some(contrib.to_vec()),
        }
    }

    fn ptr_id(&self) -> usize {
        Rc::as_ptr(&self.inner) as usize
    }
}

/// Accumulate d(loss)/d(leaf) into every `requires_grad` leaf reachable from
/// `loss`. Repeated calls accumulate additively until grads are cleared.
pub fn backward(loss: &Tensor) -> Result<()> {
    if loss.numel() != 1 {
        return Err(Error::Validation(format!(
            "backward requires a scalar loss, got shape {:?}",
            loss.shape()
        )));
    }
    // Post-order DFS over tensors that carry a node.
    let mut order: Vec<Tensor> = Vec::new();
    let mut visited: HashSet<usize> = HashSet::new();
    let mut stack: Vec<(Tensor, bool)> = vec![(loss.clone(), false)];
    while let Some((t, expanded)) = stack.pop() {
        if expanded {
            order.push(t);
            continue;
        }
        if !visited.insert(t.ptr_id()) {
            continue;
        }
        let parents: Vec<Tensor> = t
            .inner
            .node
            .borrow()
            .as_ref()
            .map(|n| n.parents.clone())
            .unwrap_or_default();
        stack.push((t.clone(), true));
        for p in parents {
            if p.inner.node.borrow().is_some() && !visited.contains(&p.ptr_id()) {
                stack.push((p, false));
            }
        }
    }

    loss.accumulate_grad(&[1.0]);
    for t in order.iter().rev() {
        let gout = {
            let node = t.inner.node.borrow();
            if node.is_none() {
                continue;
            }
            // Non-leaf grads are transient: consume them to bound memory.
            match t.inner.grad.borrow_mut().take() {
                Some(g) => g,
                None => continue,
            }
        };
        backward::dispatch(t, &gout)?;
    }
    Ok(())
}
