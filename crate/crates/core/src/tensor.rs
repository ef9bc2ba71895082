//! Dense N-d tensors with reverse-mode differentiation.
//!
//! Layout is batch × channel × height × width for 4-d tensors. Every op
//! builds the graph define-by-run: an op output holds handles to its inputs
//! plus a closure mapping the output gradient to input gradients. Tensors are
//! immutable after construction and cheap to clone (shared buffer), so they
//! can be sent across threads; a backward pass itself runs on one thread.
//!
//! Intra-op parallelism (rayon over independent output slices) never splits
//! a reduction across threads, so results are bitwise identical for any
//! thread count.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Tensor extents, outermost first.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct Shape(pub Vec<usize>);

impl Shape {
    pub fn numel(&self) -> usize {
        self.0.iter().product()
    }

    pub fn rank(&self) -> usize {
        self.0.len()
    }

    /// Extents of a 4-d tensor as (batch, channels, height, width).
    pub fn nchw(&self) -> Result<(usize, usize, usize, usize)> {
        match self.0[..] {
            [n, c, h, w] => Ok((n, c, h, w)),
            _ => Err(Error::Dimension(format!(
                "expected 4-d tensor, got shape {:?}",
                self.0
            ))),
        }
    }
}

impl From<Vec<usize>> for Shape {
    fn from(v: Vec<usize>) -> Self {
        Shape(v)
    }
}

impl From<&[usize]> for Shape {
    fn from(v: &[usize]) -> Self {
        Shape(v.to_vec())
    }
}

impl<const N: usize> From<[usize; N]> for Shape {
    fn from(v: [usize; N]) -> Self {
        Shape(v.to_vec())
    }
}

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

/// Gradient closure: output gradient → one optional gradient per parent,
/// in parent order.
pub(crate) type BackwardFn<S> = Box<dyn Fn(&[S]) -> Vec<Option<Vec<S>>> + Send + Sync>;

struct Node<S: Scalar> {
    id: u64,
    shape: Shape,
    data: Vec<S>,
    requires_grad: bool,
    parents: Vec<Tensor<S>>,
    backward: Option<BackwardFn<S>>,
    op: &'static str,
}

/// Shared-buffer handle to an immutable tensor value plus its graph edge.
pub struct Tensor<S: Scalar>(Arc<Node<S>>);

impl<S: Scalar> Clone for Tensor<S> {
    fn clone(&self) -> Self {
        Tensor(Arc::clone(&self.0))
    }
}

impl<S: Scalar> std::fmt::Debug for Tensor<S> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tensor")
            .field("id", &self.0.id)
            .field("shape", &self.0.shape)
            .field("requires_grad", &self.0.requires_grad)
            .field("op", &self.0.op)
            .finish()
    }
}

impl<S: Scalar> Tensor<S> {
    fn new_node(
        data: Vec<S>,
        shape: Shape,
        requires_grad: bool,
        parents: Vec<Tensor<S>>,
        backward: Option<BackwardFn<S>>,
        op: &'static str,
    ) -> Result<Self> {
        if shape.numel() != data.len() {
            return Err(Error::Dimension(format!(
                "shape {:?} implies {} elements, buffer has {}",
                shape.0,
                shape.numel(),
                data.len()
            )));
        }
        Ok(Tensor(Arc::new(Node {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            shape,
            data,
            requires_grad,
            parents,
            backward,
            op,
        })))
    }

    /// Leaf tensor that does not take gradients (inputs, targets).
    pub fn from_vec(data: Vec<S>, shape: impl Into<Shape>) -> Result<Self> {
        Self::new_node(data, shape.into(), false, Vec::new(), None, "leaf")
    }

    /// Leaf tensor that accumulates gradients (learnable parameter).
    pub fn param(data: Vec<S>, shape: impl Into<Shape>) -> Result<Self> {
        Self::new_node(data, shape.into(), true, Vec::new(), None, "param")
    }

    pub fn zeros(shape: impl Into<Shape>) -> Self {
        let shape = shape.into();
        let n = shape.numel();
        Self::new_node(vec![S::ZERO; n], shape, false, Vec::new(), None, "leaf").unwrap()
    }

    pub fn full(shape: impl Into<Shape>, value: S) -> Self {
        let shape = shape.into();
        let n = shape.numel();
        Self::new_node(vec![value; n], shape, false, Vec::new(), None, "leaf").unwrap()
    }

    pub fn scalar(value: S) -> Self {
        Self::from_vec(vec![value], [1]).unwrap()
    }

    /// Op output. Drops the graph edge when no parent needs gradients, and
    /// rejects non-finite values (contract: finite in → finite out).
    pub(crate) fn from_op(
        data: Vec<S>,
        shape: impl Into<Shape>,
        parents: Vec<Tensor<S>>,
        backward: BackwardFn<S>,
        op: &'static str,
    ) -> Result<Self> {
        if let Some(bad) = data.iter().find(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                site: format!("{op} output ({bad})"),
            });
        }
        let requires_grad = parents.iter().any(|p| p.requires_grad());
        if requires_grad {
            Self::new_node(data, shape.into(), true, parents, Some(backward), op)
        } else {
            Self::new_node(data, shape.into(), false, Vec::new(), None, op)
        }
    }

    pub fn id(&self) -> u64 {
        self.0.id
    }

    pub fn shape(&self) -> &Shape {
        &self.0.shape
    }

    pub fn dims(&self) -> &[usize] {
        &self.0.shape.0
    }

    pub fn numel(&self) -> usize {
        self.0.data.len()
    }

    pub fn data(&self) -> &[S] {
        &self.0.data
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn op_name(&self) -> &'static str {
        self.0.op
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> Result<S> {
        if self.numel() == 1 {
            Ok(self.0.data[0])
        } else {
            Err(Error::Contract(format!(
                "item() on tensor of {} elements",
                self.numel()
            )))
        }
    }

    /// Same values, detached from the graph (no gradient flow).
    pub fn detach(&self) -> Self {
        Self::from_vec(self.0.data.clone(), self.0.shape.clone()).unwrap()
    }

    /// Reverse-mode differentiation from a scalar loss. Populates the
    /// gradient of every `requires_grad` tensor reachable from `self`.
    pub fn backward(&self) -> Result<Gradients<S>> {
        let mut grads = Gradients::new();
        self.backward_into(&mut grads)?;
        Ok(grads)
    }

    /// As [`backward`](Self::backward), accumulating into an existing store.
    pub fn backward_into(&self, grads: &mut Gradients<S>) -> Result<()> {
        if self.numel() != 1 {
            return Err(Error::Contract(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.dims()
            )));
        }

        // Post-order DFS over parent edges; reversed, this visits each node
        // exactly once with its output gradient complete before use.
        let mut order: Vec<Tensor<S>> = Vec::new();
        let mut visited: HashMap<u64, ()> = HashMap::new();
        let mut stack: Vec<(Tensor<S>, usize)> = vec![(self.clone(), 0)];
        while let Some((node, child_idx)) = stack.pop() {
            if child_idx == 0 {
                if visited.contains_key(&node.id()) {
                    continue;
                }
                visited.insert(node.id(), ());
            }
            if child_idx < node.0.parents.len() {
                let parent = node.0.parents[child_idx].clone();
                stack.push((node, child_idx + 1));
                if parent.requires_grad() && !visited.contains_key(&parent.id()) {
                    stack.push((parent, 0));
                }
            } else {
                order.push(node);
            }
        }

        let mut flowing: HashMap<u64, Vec<S>> = HashMap::new();
        flowing.insert(self.id(), vec![S::ONE]);

        for node in order.iter().rev() {
            let Some(out_grad) = flowing.get(&node.id()) else {
                continue;
            };
            if let Some(backward) = &node.0.backward {
                let parent_grads = backward(out_grad);
                debug_assert_eq!(parent_grads.len(), node.0.parents.len());
                for (parent, pg) in node.0.parents.iter().zip(parent_grads) {
                    let Some(pg) = pg else { continue };
                    if !parent.requires_grad() {
                        continue;
                    }
                    debug_assert_eq!(pg.len(), parent.numel(), "gradient shape mismatch");
                    match flowing.get_mut(&parent.id()) {
                        Some(acc) => {
                            for (a, g) in acc.iter_mut().zip(&pg) {
                                *a += *g;
                            }
                        }
                        None => {
                            flowing.insert(parent.id(), pg);
                        }
                    }
                }
            }
        }

        for node in order {
            if node.requires_grad() {
                if let Some(g) = flowing.remove(&node.id()) {
                    grads.accumulate(node.id(), g);
                }
            }
        }
        Ok(())
    }
}

/// Gradient buffers keyed by tensor identity.
#[derive(Default)]
pub struct Gradients<S: Scalar> {
    by_id: HashMap<u64, Vec<S>>,
}

impl<S: Scalar> Gradients<S> {
    pub fn new() -> Self {
        Gradients {
            by_id: HashMap::new(),
        }
    }

    pub fn get(&self, t: &Tensor<S>) -> Option<&[S]> {
        self.by_id.get(&t.id()).map(|v| v.as_slice())
    }

    pub fn contains(&self, t: &Tensor<S>) -> bool {
        self.by_id.contains_key(&t.id())
    }

    pub fn len(&self) -> usize {
        self.by_id.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_id.is_empty()
    }

    fn accumulate(&mut self, id: u64, g: Vec<S>) {
        match self.by_id.get_mut(&id) {
            Some(acc) => {
                for (a, v) in acc.iter_mut().zip(&g) {
                    *a += *v;
                }
            }
            None => {
                self.by_id.insert(id, g);
            }
        }
    }
}
