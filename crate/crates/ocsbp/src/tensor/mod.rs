//! Reverse-mode differentiable tensor engine.
//!
//! All forward values are recorded on a [`Graph`] (a tape). Calling
//! [`Tensor::backward`] on a scalar populates gradients on every
//! reachable tensor that was created with `requires_grad`.

mod array;
mod conv;
mod norm;
mod ops;

pub mod checkpoint;
pub mod gradcheck;
pub mod params;
pub mod rng;

pub use array::{broadcast_shape, reduce_to_shape, strides_of, zip_broadcast, Array, El};
pub use ops::concat;
pub use params::{
    adam_step, apply_grads, init_conv, init_conv_transpose, init_linear, init_norm, AdamConfig,
    Binder, Param, ParamStore,
};
pub use rng::RngState;

use std::cell::RefCell;
use std::rc::Rc;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ShapeError {
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    Mismatch {
        op: String,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: expected scalar, got shape {shape:?}")]
    NotScalar { op: String, shape: Vec<usize> },
}

type BackFn<T> = Box<dyn Fn(&[Array<T>], &mut [Option<Array<T>>], &[usize], usize)>;

struct NodeMeta<T: El> {
    parents: Vec<usize>,
    requires_grad: bool,
    backward: Option<BackFn<T>>,
}

struct GraphInner<T: El> {
    values: Vec<Array<T>>,
    grads: Vec<Option<Array<T>>>,
    meta: Vec<NodeMeta<T>>,
}

/// The recording tape. Cheap to clone (shared handle).
pub struct Graph<T: El> {
    inner: Rc<RefCell<GraphInner<T>>>,
}

impl<T: El> Clone for Graph<T> {
    fn clone(&self) -> Self {
        Self {
            inner: Rc::clone(&self.inner),
        }
    }
}

impl<T: El> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: El> Graph<T> {
    pub fn new() -> Self {
        Self {
            inner: Rc::new(RefCell::new(GraphInner {
                values: Vec::new(),
                grads: Vec::new(),
                meta: Vec::new(),
            })),
        }
    }

    fn push(
        &self,
        value: Array<T>,
        parents: Vec<usize>,
        requires_grad: bool,
        backward: Option<BackFn<T>>,
    ) -> Tensor<T> {
        let mut inner = self.inner.borrow_mut();
        let idx = inner.values.len();
        inner.values.push(value);
        inner.grads.push(None);
        inner.meta.push(NodeMeta {
            parents,
            requires_grad,
            backward,
        });
        Tensor {
            graph: self.clone(),
            idx,
        }
    }

    /// A tensor that does not take gradients.
    pub fn constant(&self, value: Array<T>) -> Tensor<T> {
        self.push(value, vec![], false, None)
    }

    pub fn scalar(&self, v: f64) -> Tensor<T> {
        self.constant(Array::scalar(T::from_f64(v)))
    }

    /// A differentiable leaf.
    pub fn leaf(&self, value: Array<T>) -> Tensor<T> {
        self.push(value, vec![], true, None)
    }

    pub fn len(&self) -> usize {
        self.inner.borrow().values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Handle to one node on a [`Graph`].
pub struct Tensor<T: El> {
    graph: Graph<T>,
    idx: usize,
}

impl<T: El> Clone for Tensor<T> {
    fn clone(&self) -> Self {
        Self {
            graph: self.graph.clone(),
            idx: self.idx,
        }
    }
}

impl<T: El> Tensor<T> {
    pub fn graph(&self) -> &Graph<T> {
        &self.graph
    }

    pub fn shape(&self) -> Vec<usize> {
        self.graph.inner.borrow().values[self.idx].shape().to_vec()
    }

    pub fn numel(&self) -> usize {
        self.graph.inner.borrow().values[self.idx].numel()
    }

    /// Clone of the forward value.
    pub fn value(&self) -> Array<T> {
        self.graph.inner.borrow().values[self.idx].clone()
    }

    pub fn item(&self) -> T {
        self.graph.inner.borrow().values[self.idx].item()
    }

    /// Read the forward value without cloning.
    pub fn with_value<R>(&self, f: impl FnOnce(&Array<T>) -> R) -> R {
        f(&self.graph.inner.borrow().values[self.idx])
    }

    pub fn requires_grad(&self) -> bool {
        self.graph.inner.borrow().meta[self.idx].requires_grad
    }

    /// Gradient populated by the last backward pass, if any.
    pub fn grad(&self) -> Option<Array<T>> {
        self.graph.inner.borrow().grads[self.idx].clone()
    }

    /// Reverse-mode sweep from a scalar. Accumulates into existing grads.
    pub fn backward(&self) -> Result<(), ShapeError> {
        let mut inner = self.graph.inner.borrow_mut();
        if inner.values[self.idx].numel() != 1 {
            return Err(ShapeError::NotScalar {
                op: "backward".into(),
                shape: inner.values[self.idx].shape().to_vec(),
            });
        }
        let root_shape = inner.values[self.idx].shape().to_vec();
        // Intermediate grads from an earlier sweep are stale; only leaves
        // accumulate across repeated backward calls.
        for i in 0..inner.meta.len() {
            if inner.meta[i].backward.is_some() {
                inner.grads[i] = None;
            }
        }
        accumulate(&mut inner.grads, self.idx, Array::full(&root_shape, T::one()));
        let GraphInner {
            values,
            grads,
            meta,
        } = &mut *inner;
        for i in (0..=self.idx).rev() {
            if grads[i].is_none() {
                continue;
            }
            if let Some(back) = &meta[i].backward {
                let parents = meta[i].parents.clone();
                back(values, grads, &parents, i);
            }
        }
        Ok(())
    }

    /// Gradient, or a zero array of the value's shape if none flowed here.
    pub fn grad_or_zeros(&self) -> Array<T> {
        let inner = self.graph.inner.borrow();
        match &inner.grads[self.idx] {
            Some(g) => g.clone(),
            None => Array::zeros(inner.values[self.idx].shape()),
        }
    }

    /// Clear gradients on the whole graph.
    pub fn zero_grads(&self) {
        let mut inner = self.graph.inner.borrow_mut();
        for g in &mut inner.grads {
            *g = None;
        }
    }

    fn same_graph(&self, other: &Tensor<T>) {
        assert!(
            Rc::ptr_eq(&self.graph.inner, &other.graph.inner),
            "tensors belong to different graphs"
        );
    }
}

pub(crate) fn accumulate<T: El>(grads: &mut [Option<Array<T>>], idx: usize, g: Array<T>) {
    match &mut grads[idx] {
        Some(existing) => existing.iadd(&g),
        slot @ None => *slot = Some(g),
    }
}
