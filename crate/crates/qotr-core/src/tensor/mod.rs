//! Dense row-major tensors with reverse-mode automatic differentiation.
//!
//! A [`Tensor`] is a value-semantic handle: cloning shares the underlying
//! buffer. Differentiation is opt-in — a tensor participates in a backward
//! pass only if it was produced from tensors attached to a [`Tape`], and
//! leaves are attached explicitly with [`Tape::watch`]. Each tape records a
//! single forward computation; independent tapes can run on separate threads.

mod nn;
mod ops;
mod tape;

pub use tape::{GradMap, Tape};

use std::sync::Arc;

use crate::error::{shape_str, Error, Result};
use crate::scalar::Scalar;

pub(crate) use tape::NodeRef;

/// Index map for gather/scatter ops. An entry of [`GatherMap::SENTINEL`]
/// means "no source": gathers read zero there, scatters discard.
#[derive(Clone, Debug)]
pub struct GatherMap {
    idx: Arc<Vec<usize>>,
}

impl GatherMap {
    pub const SENTINEL: usize = usize::MAX;

    pub fn new(idx: Vec<usize>) -> Self {
        GatherMap { idx: Arc::new(idx) }
    }

    pub fn len(&self) -> usize {
        self.idx.len()
    }

    pub fn is_empty(&self) -> bool {
        self.idx.is_empty()
    }

    pub fn indices(&self) -> &[usize] {
        &self.idx
    }

    pub(crate) fn share(&self) -> Arc<Vec<usize>> {
        Arc::clone(&self.idx)
    }
}

/// N-dimensional array of [`Scalar`] values, row-major and contiguous.
#[derive(Clone)]
pub struct Tensor<T: Scalar> {
    shape: Vec<usize>,
    data: Arc<Vec<T>>,
    node: Option<NodeRef<T>>,
}

impl<T: Scalar> std::fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Tensor{} ", shape_str(&self.shape))?;
        if self.numel() <= 8 {
            write!(f, "{:?}", self.data())
        } else {
            write!(f, "[{} values]", self.numel())
        }
    }
}

pub(crate) fn numel_of(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl<T: Scalar> Tensor<T> {
    /// Build a tensor from raw data. The data length must match the shape.
    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self> {
        if numel_of(shape) != data.len() {
            return Err(Error::Shape(format!(
                "data of length {} does not fill shape {}",
                data.len(),
                shape_str(shape)
            )));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data: Arc::new(data),
            node: None,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: Arc::new(vec![T::ZERO; numel_of(shape)]),
            node: None,
        }
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: Arc::new(vec![value; numel_of(shape)]),
            node: None,
        }
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, T::ONE)
    }

    /// Single-element tensor of shape `[1]`.
    pub fn scalar(value: T) -> Self {
        Tensor {
            shape: vec![1],
            data: Arc::new(vec![value]),
            node: None,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    /// Mutable access to the buffer; copies if the buffer is shared.
    /// Intended for optimizer updates on raw (untracked) parameters.
    pub fn data_mut(&mut self) -> &mut Vec<T> {
        debug_assert!(
            self.node.is_none(),
            "mutating a tensor that is attached to a tape"
        );
        Arc::make_mut(&mut self.data)
    }

    /// The value of a single-element tensor.
    pub fn item(&self) -> Result<T> {
        if self.numel() != 1 {
            return Err(Error::Contract(format!(
                "item() on tensor of shape {}",
                shape_str(&self.shape)
            )));
        }
        Ok(self.data[0])
    }

    /// Whether this tensor is recorded on a tape.
    pub fn is_tracked(&self) -> bool {
        self.node.is_some()
    }

    /// Drop any tape attachment, keeping the values.
    pub fn detach(&self) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: Arc::clone(&self.data),
            node: None,
        }
    }

    /// Convert element type (always detached).
    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: Arc::new(self.data.iter().map(|v| U::from_f64(v.to_f64())).collect()),
            node: None,
        }
    }

    pub(crate) fn share_data(&self) -> Arc<Vec<T>> {
        Arc::clone(&self.data)
    }

    pub(crate) fn node_ref(&self) -> Option<&NodeRef<T>> {
        self.node.as_ref()
    }

    pub(crate) fn set_node(&mut self, node: NodeRef<T>) {
        self.node = Some(node);
    }

    pub(crate) fn parent_id(&self) -> Option<usize> {
        self.node.as_ref().map(|nr| nr.id)
    }

    /// Record this tensor as the output of an op with the given backward rule.
    pub(crate) fn attach(&mut self, tape: &Tape<T>, back: tape::BackFn<T>) {
        let id = tape.push(self.numel(), Some(back));
        self.node = Some(NodeRef {
            tape: tape.clone(),
            id,
        });
    }
}
