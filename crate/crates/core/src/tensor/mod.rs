//! Dense tensors with reverse-mode automatic differentiation.
//!
//! A [`Tensor`] is an immutable value plus, when it was produced by a
//! differentiable operation on tracked inputs, a record of how to push a
//! gradient back to those inputs. Graphs are built implicitly by calling the
//! operations in [`ops`], [`conv`], [`norm`] and [`activation`], and consumed
//! by [`Tensor::backward`].
//!
//! Layout is row-major; 5-D feature maps are `N, C, D, H, W`.

pub mod activation;
pub mod conv;
mod kernels;
pub mod norm;
pub mod ops;
mod real;
pub mod reference;

use std::collections::HashMap;
use std::fmt;
use std::sync::{Arc, Mutex};

pub use conv::{conv3d, ConvSpec};
pub use real::{gemm, MatRef, Real};

use crate::error::{Error, Result};

/// Gradient contributions for every input of one recorded operation.
pub(crate) type InputGrads<F> = Vec<Option<Vec<F>>>;

type BackwardFn<F> = Box<dyn FnOnce(&[F], &[bool]) -> InputGrads<F> + Send>;

struct GradFn<F: Real> {
    inputs: Vec<Tensor<F>>,
    backward: BackwardFn<F>,
}

struct Node<F: Real> {
    shape: Vec<usize>,
    data: Arc<Vec<F>>,
    requires_grad: bool,
    is_leaf: bool,
    grad: Mutex<Option<Vec<F>>>,
    grad_fn: Mutex<Option<GradFn<F>>>,
}

/// Dense N-dimensional array with optional gradient tracking.
pub struct Tensor<F: Real = f32> {
    node: Arc<Node<F>>,
}

impl<F: Real> Clone for Tensor<F> {
    fn clone(&self) -> Self {
        Tensor { node: Arc::clone(&self.node) }
    }
}

impl<F: Real> fmt::Debug for Tensor<F> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("dtype", &F::NAME)
            .field("shape", &self.node.shape)
            .field("requires_grad", &self.node.requires_grad)
            .finish()
    }
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl<F: Real> Tensor<F> {
    pub fn from_vec(shape: impl Into<Vec<usize>>, data: Vec<F>) -> Result<Self> {
        let shape = shape.into();
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::shape(format!("zero-sized dimension in {shape:?}")));
        }
        if numel(&shape) != data.len() {
            return Err(Error::shape(format!(
                "shape {shape:?} needs {} elements, got {}",
                numel(&shape),
                data.len()
            )));
        }
        Ok(Self::raw(shape, Arc::new(data), false))
    }

    /// Wraps shared storage without copying it.
    pub fn from_shared(shape: impl Into<Vec<usize>>, data: Arc<Vec<F>>) -> Result<Self> {
        let shape = shape.into();
        if numel(&shape) != data.len() || shape.iter().any(|&d| d == 0) {
            return Err(Error::shape(format!("shape {shape:?} vs {} elements", data.len())));
        }
        Ok(Self::raw(shape, data, false))
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Self {
        Self::full(shape, F::zero())
    }

    pub fn ones(shape: impl Into<Vec<usize>>) -> Self {
        Self::full(shape, F::one())
    }

    pub fn full(shape: impl Into<Vec<usize>>, value: F) -> Self {
        let shape = shape.into();
        let n = numel(&shape);
        Self::raw(shape, Arc::new(vec![value; n]), false)
    }

    pub fn scalar(value: F) -> Self {
        Self::raw(vec![1], Arc::new(vec![value]), false)
    }

    fn raw(shape: Vec<usize>, data: Arc<Vec<F>>, requires_grad: bool) -> Self {
        Tensor {
            node: Arc::new(Node {
                shape,
                data,
                requires_grad,
                is_leaf: true,
                grad: Mutex::new(None),
                grad_fn: Mutex::new(None),
            }),
        }
    }

    /// Returns a new leaf sharing this tensor's storage with gradient
    /// tracking switched on or off.
    pub fn requires_grad(self, on: bool) -> Self {
        Self::raw(self.node.shape.clone(), Arc::clone(&self.node.data), on)
    }

    /// Untracked view of the same values.
    pub fn detach(&self) -> Self {
        Self::raw(self.node.shape.clone(), Arc::clone(&self.node.data), false)
    }

    pub fn shape(&self) -> &[usize] {
        &self.node.shape
    }

    pub fn data(&self) -> &[F] {
        &self.node.data
    }

    pub fn shared_data(&self) -> Arc<Vec<F>> {
        Arc::clone(&self.node.data)
    }

    pub fn to_vec(&self) -> Vec<F> {
        self.node.data.as_ref().clone()
    }

    pub fn numel(&self) -> usize {
        self.node.data.len()
    }

    pub fn ndim(&self) -> usize {
        self.node.shape.len()
    }

    pub fn tracks_grad(&self) -> bool {
        self.node.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        self.node.is_leaf
    }

    /// Accumulated gradient of a leaf after [`Tensor::backward`].
    pub fn grad(&self) -> Option<Vec<F>> {
        self.node.grad.lock().expect("grad lock").clone()
    }

    /// Removes and returns the accumulated gradient.
    pub fn take_grad(&self) -> Option<Vec<F>> {
        self.node.grad.lock().expect("grad lock").take()
    }

    pub fn item(&self) -> F {
        self.node.data[0]
    }

    pub fn reshape(&self, shape: impl Into<Vec<usize>>) -> Result<Self> {
        let shape = shape.into();
        if numel(&shape) != self.numel() {
            return Err(Error::shape(format!("cannot reshape {:?} to {shape:?}", self.shape())));
        }
        let data = self.node.data.as_ref().clone();
        Ok(Self::from_op(shape, data, vec![self.clone()], |g, _| vec![Some(g.to_vec())]))
    }

    pub fn cast<G: Real>(&self) -> Tensor<G> {
        let data = self.data().iter().map(|&v| G::lit(v.as_f64())).collect();
        Tensor::raw(self.node.shape.clone(), Arc::new(data), false)
    }

    /// Records the result of an operation. The backward closure receives the
    /// output gradient and a mask of which inputs need a gradient, and
    /// returns one entry per input. Nothing is recorded when no input tracks
    /// gradients, so intermediate values are freed as soon as they go out of
    /// scope.
    pub(crate) fn from_op(
        shape: Vec<usize>,
        data: Vec<F>,
        inputs: Vec<Tensor<F>>,
        backward: impl FnOnce(&[F], &[bool]) -> InputGrads<F> + Send + 'static,
    ) -> Self {
        debug_assert_eq!(numel(&shape), data.len());
        let requires_grad = inputs.iter().any(|t| t.node.requires_grad);
        if !requires_grad {
            return Self::raw(shape, Arc::new(data), false);
        }
        Tensor {
            node: Arc::new(Node {
                shape,
                data: Arc::new(data),
                requires_grad: true,
                is_leaf: false,
                grad: Mutex::new(None),
                grad_fn: Mutex::new(Some(GradFn { inputs, backward: Box::new(backward) })),
            }),
        }
    }

    fn key(&self) -> usize {
        Arc::as_ptr(&self.node) as usize
    }

    /// Reverse-mode differentiation from a scalar loss. Gradients are
    /// accumulated into every reachable leaf created with
    /// `requires_grad(true)`; the recorded graph is released as it is
    /// walked, so a second call on the same graph fails.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(Error::NonScalarLoss(self.shape().to_vec()));
        }
        if !self.node.requires_grad {
            return Err(Error::NoGradPath);
        }
        if self.node.is_leaf {
            accumulate(&mut self.node.grad.lock().expect("grad lock"), &[F::one()]);
            return Ok(());
        }

        let order = self.topo_order()?;
        let mut pending: HashMap<usize, Vec<F>> = HashMap::new();
        pending.insert(self.key(), vec![F::one()]);

        for t in order.iter().rev() {
            let Some(grad_out) = pending.remove(&t.key()) else { continue };
            let grad_fn = t.node.grad_fn.lock().expect("grad_fn lock").take();
            let Some(GradFn { inputs, backward }) = grad_fn else {
                return Err(Error::GraphConsumed);
            };
            let needs: Vec<bool> = inputs.iter().map(|i| i.node.requires_grad).collect();
            let grads = backward(&grad_out, &needs);
            debug_assert_eq!(grads.len(), inputs.len());
            for (input, grad) in inputs.iter().zip(grads) {
                let Some(grad) = grad else { continue };
                if !input.node.requires_grad {
                    continue;
                }
                debug_assert_eq!(grad.len(), input.numel());
                if input.node.is_leaf {
                    accumulate(&mut input.node.grad.lock().expect("grad lock"), &grad);
                } else {
                    match pending.get_mut(&input.key()) {
                        Some(acc) => acc.iter_mut().zip(&grad).for_each(|(a, &g)| *a += g),
                        None => {
                            pending.insert(input.key(), grad);
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// Non-leaf nodes reachable from `self`, parents before children.
    fn topo_order(&self) -> Result<Vec<Tensor<F>>> {
        let mut order = Vec::new();
        let mut visited = std::collections::HashSet::new();
        // (node, children_pushed)
        let mut stack: Vec<(Tensor<F>, bool)> = vec![(self.clone(), false)];
        while let Some((t, expanded)) = stack.pop() {
            if expanded {
                order.push(t);
                continue;
            }
            if !visited.insert(t.key()) {
                continue;
            }
            let guard = t.node.grad_fn.lock().expect("grad_fn lock");
            let Some(grad_fn) = guard.as_ref() else {
                return Err(Error::GraphConsumed);
            };
            let children: Vec<Tensor<F>> = grad_fn
                .inputs
                .iter()
                .filter(|i| i.node.requires_grad && !i.node.is_leaf && !visited.contains(&i.key()))
                .cloned()
                .collect();
            drop(guard);
            stack.push((t, true));
            for c in children {
                stack.push((c, false));
            }
        }
        Ok(order)
    }
}

fn accumulate<F: Real>(slot: &mut Option<Vec<F>>, grad: &[F]) {
    match slot {
        Some(acc) => acc.iter_mut().zip(grad).for_each(|(a, &g)| *a += g),
        None => *slot = Some(grad.to_vec()),
    }
}
