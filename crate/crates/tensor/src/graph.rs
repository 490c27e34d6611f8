//! Reverse-mode autodiff over dynamically recorded graphs.
//!
//! Every op returns a new [`Var`] holding its value, its parents and a
//! closure that maps the output gradient onto parent gradients. Leaves keep
//! their accumulated gradient in a `RefCell`; interior gradients live only for
//! the duration of one [`Var::backward`] call.

use std::cell::{Ref, RefCell};
use std::collections::{HashMap, HashSet};
use std::fmt;
use std::rc::Rc;
use std::sync::atomic::{AtomicUsize, Ordering};

use crate::error::{Result, TensorError};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Maps (output grad, parents, which parents need grads) to parent grads.
pub(crate) type BackwardFn<T> =
    Box<dyn Fn(&Tensor<T>, &[Var<T>], &[bool]) -> Vec<Option<Tensor<T>>>>;

static NEXT_ID: AtomicUsize = AtomicUsize::new(0);

pub(crate) struct Node<T: Scalar> {
    id: usize,
    op: &'static str,
    value: Tensor<T>,
    requires_grad: bool,
    grad: RefCell<Option<Tensor<T>>>,
    parents: Vec<Var<T>>,
    backward: Option<BackwardFn<T>>,
}

/// A tensor participating in the autodiff graph.
pub struct Var<T: Scalar>(Rc<Node<T>>);

impl<T: Scalar> Clone for Var<T> {
    fn clone(&self) -> Self {
        Var(Rc::clone(&self.0))
    }
}

impl<T: Scalar> fmt::Debug for Var<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Var")
            .field("op", &self.0.op)
            .field("shape", &self.shape())
            .field("requires_grad", &self.0.requires_grad)
            .finish()
    }
}

impl<T: Scalar> Var<T> {
    /// Leaf that never receives a gradient.
    pub fn constant(value: Tensor<T>) -> Self {
        Self::leaf(value, false)
    }

    /// Leaf that accumulates a gradient on backward.
    pub fn param(value: Tensor<T>) -> Self {
        Self::leaf(value, true)
    }

    fn leaf(value: Tensor<T>, requires_grad: bool) -> Self {
        Var(Rc::new(Node {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            op: "leaf",
            value,
            requires_grad,
            grad: RefCell::new(None),
            parents: Vec::new(),
            backward: None,
        }))
    }

    /// Records an op result. Fails when the value contains NaN or infinity.
    pub(crate) fn from_op(
        op: &'static str,
        value: Tensor<T>,
        parents: Vec<Var<T>>,
        backward: BackwardFn<T>,
    ) -> Result<Self> {
        if !value.is_finite() {
            return Err(TensorError::NonFinite { op });
        }
        let requires_grad = parents.iter().any(Var::requires_grad);
        let (parents, backward) = if requires_grad {
            (parents, Some(backward))
        } else {
            (Vec::new(), None)
        };
        Ok(Var(Rc::new(Node {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            op,
            value,
            requires_grad,
            grad: RefCell::new(None),
            parents,
            backward,
        })))
    }

    pub fn value(&self) -> &Tensor<T> {
        &self.0.value
    }

    pub fn shape(&self) -> &[usize] {
        self.0.value.shape()
    }

    pub fn data(&self) -> &[T] {
        self.0.value.data()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn op_name(&self) -> &'static str {
        self.0.op
    }

    pub fn is_leaf(&self) -> bool {
        self.0.backward.is_none()
    }

    /// Accumulated gradient of a leaf, if backward has reached it.
    pub fn grad(&self) -> Option<Ref<'_, Tensor<T>>> {
        let g = self.0.grad.borrow();
        if g.is_some() {
            Some(Ref::map(g, |g| g.as_ref().expect("checked")))
        } else {
            None
        }
    }

    pub fn take_grad(&self) -> Option<Tensor<T>> {
        self.0.grad.borrow_mut().take()
    }

    pub fn zero_grad(&self) {
        *self.0.grad.borrow_mut() = None;
    }

    /// Backpropagates from a one-element loss into every leaf with
    /// `requires_grad`, adding to any gradient already stored there.
    pub fn backward(&self) -> Result<()> {
        if self.0.value.len() != 1 {
            return Err(TensorError::NotScalar(self.shape().to_vec()));
        }
        if !self.requires_grad() {
            return Ok(());
        }
        let order = self.topo_order();
        let mut grads: HashMap<usize, Tensor<T>> = HashMap::new();
        grads.insert(self.0.id, Tensor::ones(self.shape()));

        for var in order.iter().rev() {
            let Some(g) = grads.remove(&var.0.id) else {
                continue;
            };
            match &var.0.backward {
                None => {
                    if var.0.requires_grad {
                        let mut slot = var.0.grad.borrow_mut();
                        match slot.as_mut() {
                            Some(acc) => acc.add_assign(&g),
                            None => *slot = Some(g),
                        }
                    }
                }
                Some(f) => {
                    let need: Vec<bool> = var.0.parents.iter().map(Var::requires_grad).collect();
                    let parent_grads = f(&g, &var.0.parents, &need);
                    debug_assert_eq!(parent_grads.len(), var.0.parents.len(), "{}", var.0.op);
                    for ((parent, pg), needed) in var.0.parents.iter().zip(parent_grads).zip(need) {
                        let Some(pg) = pg else { continue };
                        if !needed {
                            continue;
                        }
                        debug_assert_eq!(pg.shape(), parent.shape(), "grad shape from {}", var.0.op);
                        match grads.get_mut(&parent.0.id) {
                            Some(acc) => acc.add_assign(&pg),
                            None => {
                                grads.insert(parent.0.id, pg);
                            }
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// Nodes reachable from `self` that require grad, parents before children.
    fn topo_order(&self) -> Vec<Var<T>> {
        let mut order = Vec::new();
        let mut visited = HashSet::new();
        let mut stack: Vec<(Var<T>, bool)> = vec![(self.clone(), false)];
        while let Some((var, expanded)) = stack.pop() {
            if expanded {
                order.push(var);
                continue;
            }
            if !visited.insert(var.0.id) {
                continue;
            }
            stack.push((var.clone(), true));
            for p in &var.0.parents {
                if p.requires_grad() && !visited.contains(&p.0.id) {
                    stack.push((p.clone(), false));
                }
            }
        }
        order
    }
}
