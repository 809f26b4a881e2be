//! Recording tape for reverse-mode differentiation.
//!
//! Nodes are appended in forward order, which is automatically a topological
//! order of the computation graph. The backward pass walks the node list once
//! in reverse, calling each node's vector-Jacobian closure and accumulating
//! contributions into its parents by summation.

use std::sync::{Arc, Mutex};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Closure computing parent gradients from the node's output gradient.
/// Returns `(parent node id, gradient)` pairs for tracked parents only.
pub(crate) type BackFn<T> = Box<dyn Fn(&[T]) -> Vec<(usize, Vec<T>)> + Send>;

struct Node<T: Scalar> {
    numel: usize,
    backward: Option<BackFn<T>>,
}

struct TapeInner<T: Scalar> {
    nodes: Vec<Node<T>>,
}

/// A recording of one forward computation. Cheap to clone (shared handle).
pub struct Tape<T: Scalar> {
    inner: Arc<Mutex<TapeInner<T>>>,
}

impl<T: Scalar> Clone for Tape<T> {
    fn clone(&self) -> Self {
        Tape {
            inner: Arc::clone(&self.inner),
        }
    }
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// A tensor's link to the tape that recorded it.
pub(crate) struct NodeRef<T: Scalar> {
    pub(crate) tape: Tape<T>,
    pub(crate) id: usize,
}

impl<T: Scalar> Clone for NodeRef<T> {
    fn clone(&self) -> Self {
        NodeRef {
            tape: self.tape.clone(),
            id: self.id,
        }
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape {
            inner: Arc::new(Mutex::new(TapeInner { nodes: Vec::new() })),
        }
    }

    fn same_tape(&self, other: &Tape<T>) -> bool {
        Arc::ptr_eq(&self.inner, &other.inner)
    }

    /// Register a differentiation leaf. The returned tensor shares the input's
    /// buffer and will receive a gradient entry after `backward`.
    pub fn watch(&self, t: &Tensor<T>) -> Tensor<T> {
        let id = self.push(t.numel(), None);
        let mut out = t.detach();
        out.set_node(NodeRef {
            tape: self.clone(),
            id,
        });
        out
    }

    pub(crate) fn push(&self, numel: usize, backward: Option<BackFn<T>>) -> usize {
        let mut inner = self.inner.lock().unwrap();
        inner.nodes.push(Node { numel, backward });
        inner.nodes.len() - 1
    }

    /// The tape shared by any tracked tensor among `parts`, if one exists.
    /// Panics if two tracked tensors come from different tapes — that is a
    /// programming error, not a recoverable condition.
    pub(crate) fn common(parts: &[&Tensor<T>]) -> Option<Tape<T>> {
        let mut found: Option<Tape<T>> = None;
        for p in parts {
            if let Some(nr) = p.node_ref() {
                match &found {
                    None => found = Some(nr.tape.clone()),
                    Some(t) => assert!(
                        t.same_tape(&nr.tape),
                        "operands recorded on different tapes"
                    ),
                }
            }
        }
        found
    }

    fn run_backward(&self, seed_id: usize, seed_numel: usize) -> GradMap<T> {
        let inner = self.inner.lock().unwrap();
        let mut grads: Vec<Option<Vec<T>>> = vec![None; inner.nodes.len()];
        grads[seed_id] = Some(vec![T::ONE; seed_numel]);
        for id in (0..=seed_id).rev() {
            if grads[id].is_none() {
                continue;
            }
            if let Some(back) = &inner.nodes[id].backward {
                let g = grads[id].as_ref().unwrap();
                for (parent, contribution) in back(g) {
                    debug_assert_eq!(contribution.len(), inner.nodes[parent].numel);
                    match &mut grads[parent] {
                        Some(acc) => {
                            for (a, c) in acc.iter_mut().zip(&contribution) {
                                *a += *c;
                            }
                        }
                        slot @ None => *slot = Some(contribution),
                    }
                }
            }
        }
        GradMap { grads }
    }
}

/// Gradients of one backward pass, indexed by tape node.
pub struct GradMap<T: Scalar> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Scalar> GradMap<T> {
    /// Gradient with respect to `t`, shaped like `t`. `None` when no gradient
    /// flowed to it (or it is not on the tape).
    pub fn grad(&self, t: &Tensor<T>) -> Option<Tensor<T>> {
        let nr = t.node_ref()?;
        let g = self.grads.get(nr.id)?.as_ref()?;
        Some(Tensor::from_vec(t.shape(), g.clone()).expect("gradient shaped like its tensor"))
    }

    /// Gradient of `t`, or zeros when no gradient flowed to it.
    pub fn grad_or_zero(&self, t: &Tensor<T>) -> Tensor<T> {
        self.grad(t).unwrap_or_else(|| Tensor::zeros(t.shape()))
    }
}

impl<T: Scalar> Tensor<T> {
    /// Run the backward pass from this scalar loss, returning gradients for
    /// every node that received one (leaves included).
    pub fn backward(&self) -> Result<GradMap<T>> {
        if self.numel() != 1 {
            return Err(Error::Contract(format!(
                "backward requires a scalar loss, got {} elements",
                self.numel()
            )));
        }
        let nr = self
            .node_ref()
            .ok_or_else(|| Error::Contract("backward on a tensor not recorded on a tape".into()))?;
        Ok(nr.tape.run_backward(nr.id, 1))
    }
}
