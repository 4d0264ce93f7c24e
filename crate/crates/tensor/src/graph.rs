//! Define-by-run reverse-mode differentiation.
//!
//! Every [`Var`] owns its value and, when it depends on something that needs
//! a gradient, the closure-free [`Backward`] record that produced it.
//! Node ids increase monotonically, so sorting reachable nodes by descending
//! id is a valid reverse topological order.

use std::collections::{HashMap, HashSet};
use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::scalar::Scalar;
use crate::tensor::Tensor;

static NEXT_ID: AtomicU64 = AtomicU64::new(0);

fn next_id() -> u64 {
    NEXT_ID.fetch_add(1, Ordering::Relaxed)
}

/// Inputs handed to a [`Backward`] implementation.
pub struct BackwardCtx<'a, T: Scalar> {
    /// Gradient of the loss with respect to this node's output.
    pub grad: &'a Tensor<T>,
    /// This node's forward value.
    pub output: &'a Tensor<T>,
    pub parents: &'a [Var<T>],
}

impl<T: Scalar> BackwardCtx<'_, T> {
    #[inline]
    pub fn needs(&self, parent: usize) -> bool {
        self.parents[parent].requires_grad()
    }

    #[inline]
    pub fn input(&self, parent: usize) -> &Tensor<T> {
        self.parents[parent].value()
    }
}

/// Local vector-Jacobian product of one operation.
pub trait Backward<T: Scalar> {
    /// One entry per parent; `None` means no contribution.
    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Vec<Option<Tensor<T>>>;
}

struct Node<T: Scalar> {
    id: u64,
    value: Tensor<T>,
    requires_grad: bool,
    parents: Vec<Var<T>>,
    op: Option<Box<dyn Backward<T>>>,
}

/// Handle to a value in the differentiation tape.
pub struct Var<T: Scalar>(Rc<Node<T>>);

impl<T: Scalar> Clone for Var<T> {
    fn clone(&self) -> Self {
        Var(Rc::clone(&self.0))
    }
}

impl<T: Scalar> std::fmt::Debug for Var<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.0.id)
            .field("shape", &self.0.value.shape())
            .field("requires_grad", &self.0.requires_grad)
            .finish()
    }
}

impl<T: Scalar> Var<T> {
    /// A value that never receives a gradient.
    pub fn constant(value: Tensor<T>) -> Self {
        Var(Rc::new(Node {
            id: next_id(),
            value,
            requires_grad: false,
            parents: Vec::new(),
            op: None,
        }))
    }

    /// A differentiable input (parameter or probe).
    pub fn leaf(value: Tensor<T>) -> Self {
        Var(Rc::new(Node {
            id: next_id(),
            value,
            requires_grad: true,
            parents: Vec::new(),
            op: None,
        }))
    }

    /// Records the result of an operation. When no parent requires a
    /// gradient the parents are not retained, so untracked forwards free
    /// intermediates as soon as their handles drop.
    pub fn from_op(value: Tensor<T>, parents: Vec<Var<T>>, op: impl Backward<T> + 'static) -> Self {
        if parents.iter().any(Var::requires_grad) {
            Var(Rc::new(Node {
                id: next_id(),
                value,
                requires_grad: true,
                parents,
                op: Some(Box::new(op)),
            }))
        } else {
            Var::constant(value)
        }
    }

    #[inline]
    pub fn value(&self) -> &Tensor<T> {
        &self.0.value
    }

    #[inline]
    pub fn shape(&self) -> &[usize] {
        self.0.value.shape()
    }

    #[inline]
    pub fn id(&self) -> u64 {
        self.0.id
    }

    #[inline]
    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn detach(&self) -> Self {
        Var::constant(self.0.value.clone())
    }

    /// Back-propagates from a scalar (or any tensor, seeded with ones).
    pub fn backward(&self) -> Gradients<T> {
        let seed = Tensor::full(self.shape(), T::one());
        self.backward_with(seed)
    }

    pub fn backward_with(&self, seed: Tensor<T>) -> Gradients<T> {
        let mut grads: HashMap<u64, Tensor<T>> = HashMap::new();
        if !self.requires_grad() {
            return Gradients { map: grads };
        }

        let mut order: Vec<Var<T>> = Vec::new();
        let mut seen = HashSet::new();
        let mut stack = vec![self.clone()];
        while let Some(v) = stack.pop() {
            if !seen.insert(v.id()) {
                continue;
            }
            for p in &v.0.parents {
                if p.requires_grad() && !seen.contains(&p.id()) {
                    stack.push(p.clone());
                }
            }
            order.push(v);
        }
        order.sort_unstable_by_key(|v| std::cmp::Reverse(v.id()));

        grads.insert(self.id(), seed);
        for node in &order {
            let Some(op) = node.0.op.as_ref() else {
                continue; // leaf: keep its gradient
            };
            let Some(grad) = grads.remove(&node.id()) else {
                continue;
            };
            let ctx = BackwardCtx {
                grad: &grad,
                output: &node.0.value,
                parents: &node.0.parents,
            };
            let parent_grads = op.backward(&ctx);
            debug_assert_eq!(parent_grads.len(), node.0.parents.len());
            for (p, g) in node.0.parents.iter().zip(parent_grads) {
                let Some(g) = g else { continue };
                if !p.requires_grad() {
                    continue;
                }
                debug_assert_eq!(g.shape(), p.shape(), "gradient shape for parent");
                match grads.get_mut(&p.id()) {
                    Some(acc) => acc.add_assign(&g).expect("gradient shape"),
                    None => {
                        grads.insert(p.id(), g);
                    }
                }
            }
        }
        Gradients { map: grads }
    }
}

/// Leaf gradients produced by [`Var::backward`].
#[derive(Debug, Default)]
pub struct Gradients<T: Scalar> {
    map: HashMap<u64, Tensor<T>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, var: &Var<T>) -> Option<&Tensor<T>> {
        self.map.get(&var.id())
    }

    pub fn take(&mut self, var: &Var<T>) -> Option<Tensor<T>> {
        self.map.remove(&var.id())
    }
}
