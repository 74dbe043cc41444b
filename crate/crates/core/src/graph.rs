//! Reverse-mode differentiation over a linear tape.
//!
//! Every operation appends a node holding its value and, when any input
//! needs a gradient, a vector-Jacobian closure. [`Graph::backward`] walks the
//! tape once in reverse order.

use alloc::boxed::Box;
use alloc::vec;
use alloc::vec::Vec;
use core::cell::{Cell, Ref, RefCell};

use crate::error::{invalid, Result};
use crate::{Real, Tensor};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Receives the output gradient and a per-parent "needs gradient" mask;
/// returns one optional gradient buffer per parent.
pub(crate) type Backward<T> = Box<dyn Fn(&[T], &[bool]) -> Vec<Option<Vec<T>>>>;

struct Node<T> {
    value: Tensor<T>,
    parents: Vec<usize>,
    backward: Option<Backward<T>>,
    requires_grad: bool,
}

/// One call of the attention kernel, as seen by the instrumentation hook.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AttentionCall {
    pub batch: usize,
    pub heads: usize,
    pub query_tokens: usize,
    pub key_tokens: usize,
    pub channels: usize,
    /// Multiply-accumulates of the two score/mixing products.
    pub macs: u64,
}

impl AttentionCall {
    /// Number of entries in the `[B, heads, T, S]` score tensor.
    pub fn score_entries(&self) -> u64 {
        (self.batch * self.heads * self.query_tokens * self.key_tokens) as u64
    }
}

pub struct Graph<T> {
    nodes: RefCell<Vec<Node<T>>>,
    record: bool,
    attention_log: RefCell<Vec<AttentionCall>>,
    branches: Cell<Option<u64>>,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Graph<T> {
    /// A recording graph: gradients can be requested afterwards.
    pub fn new() -> Self {
        Graph {
            nodes: RefCell::new(Vec::new()),
            record: true,
            attention_log: RefCell::new(Vec::new()),
            branches: Cell::new(None),
        }
    }

    /// A non-recording graph for inference; no closures are kept.
    pub fn inference() -> Self {
        Graph { record: false, ..Self::new() }
    }

    pub fn is_recording(&self) -> bool {
        self.record
    }

    /// Starts hashing the branch taken by every piecewise operation
    /// (ReLU side, max-pool winner, clamp region, sign of `|x|`). Two
    /// evaluations with equal signatures lie on the same smooth piece.
    pub fn track_branches(&self) {
        self.branches.set(Some(0xcbf2_9ce4_8422_2325));
    }

    pub fn branch_signature(&self) -> Option<u64> {
        self.branches.get()
    }

    pub(crate) fn note_branches(&self, codes: impl Iterator<Item = u64>) {
        if let Some(mut h) = self.branches.get() {
            for c in codes {
                h = (h ^ c).wrapping_mul(0x0100_0000_01b3);
            }
            self.branches.set(Some(h));
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Constant input; gradients never flow into it.
    pub fn input(&self, value: Tensor<T>) -> Var {
        self.push_node(value, Vec::new(), None, false)
    }

    /// Differentiable leaf.
    pub fn leaf(&self, value: Tensor<T>) -> Var {
        let rg = self.record;
        self.push_node(value, Vec::new(), None, rg)
    }

    /// Same value as `x`, cut off from the gradient flow.
    pub fn detach(&self, x: Var) -> Var {
        let v = self.value(x);
        self.input(v)
    }

    pub fn value(&self, x: Var) -> Tensor<T> {
        self.nodes.borrow()[x.0].value.clone()
    }

    pub fn shape(&self, x: Var) -> Vec<usize> {
        self.nodes.borrow()[x.0].value.shape().to_vec()
    }

    pub(crate) fn with_value<R>(&self, x: Var, f: impl FnOnce(&Tensor<T>) -> R) -> R {
        f(&self.nodes.borrow()[x.0].value)
    }

    pub fn requires_grad(&self, x: Var) -> bool {
        self.nodes.borrow()[x.0].requires_grad
    }

    pub fn attention_log(&self) -> Ref<'_, Vec<AttentionCall>> {
        self.attention_log.borrow()
    }

    pub(crate) fn log_attention(&self, call: AttentionCall) {
        self.attention_log.borrow_mut().push(call);
    }

    fn push_node(
        &self,
        value: Tensor<T>,
        parents: Vec<usize>,
        backward: Option<Backward<T>>,
        requires_grad: bool,
    ) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value, parents, backward, requires_grad });
        Var(nodes.len() - 1)
    }

    /// Appends an operation result. The closure is dropped unless recording
    /// and at least one parent requires a gradient.
    pub(crate) fn push(
        &self,
        value: Tensor<T>,
        parents: &[Var],
        backward: impl Fn(&[T], &[bool]) -> Vec<Option<Vec<T>>> + 'static,
    ) -> Var {
        let requires_grad = self.record && {
            let nodes = self.nodes.borrow();
            parents.iter().any(|p| nodes[p.0].requires_grad)
        };
        let bw: Option<Backward<T>> = if requires_grad { Some(Box::new(backward)) } else { None };
        self.push_node(value, parents.iter().map(|p| p.0).collect(), bw, requires_grad)
    }

    /// Gradients of the scalar `loss` with respect to every node that
    /// requires one.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let nodes = self.nodes.borrow();
        if nodes[loss.0].value.numel() != 1 {
            return Err(invalid!(
                "backward needs a scalar, got shape {:?}",
                nodes[loss.0].value.shape()
            ));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..nodes.len()).map(|_| None).collect();
        if !nodes[loss.0].requires_grad {
            return Ok(Gradients { grads });
        }
        grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            let node = &nodes[i];
            let Some(bw) = node.backward.as_ref() else { continue };
            let Some(g) = grads[i].take() else { continue };
            let needs: Vec<bool> = node.parents.iter().map(|&p| nodes[p].requires_grad).collect();
            let parent_grads = bw(&g, &needs);
            debug_assert_eq!(parent_grads.len(), node.parents.len());
            for ((&p, pg), need) in node.parents.iter().zip(parent_grads).zip(needs) {
                let Some(pg) = pg else { continue };
                if !need {
                    continue;
                }
                debug_assert_eq!(pg.len(), nodes[p].value.numel(), "gradient size for parent {p}");
                match &mut grads[p] {
                    Some(acc) => acc.iter_mut().zip(pg).for_each(|(a, b)| *a += b),
                    slot @ None => *slot = Some(pg),
                }
            }
            // interior node gradients are consumed; keep leaves only
        }
        Ok(Gradients { grads })
    }
}

/// Result of [`Graph::backward`]: gradients of leaves (interior nodes are
/// released during the sweep).
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, x: Var) -> Option<&[T]> {
        self.grads.get(x.0).and_then(|g| g.as_deref())
    }

    pub fn take(&mut self, x: Var) -> Option<Vec<T>> {
        self.grads.get_mut(x.0).and_then(|g| g.take())
    }
}
