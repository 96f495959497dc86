//! A small reverse-mode automatic differentiation engine over `ndarray`.
//!
//! The engine is define-by-run: every operation eagerly computes its value
//! and records a backward closure on a [`Tape`]. Calling [`Tape::backward`]
//! on a scalar node walks the recorded nodes in reverse and accumulates
//! gradients. Values are dynamically shaped (`ArrayD`) and generic over the
//! floating-point type so the same code can be trained in `f32` and
//! gradient-checked against central finite differences in `f64`.
//!
//! Only the handful of operations needed by the set encoders, the recurrent
//! models and the loss terms are implemented; heavyweight fused kernels
//! (LSTM cell, softmax, layer norm) carry hand-derived backward passes.

mod ops;
pub mod gradcheck;
mod params;

pub mod nn;
pub mod optim;

pub use params::{init_uniform, ParamStore};

use std::cell::RefCell;
use std::collections::HashMap;
use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::rc::Rc;

use ndarray::{ArrayD, LinalgScalar, ScalarOperand};
use num_traits::{Float, FromPrimitive, NumAssignOps, ToPrimitive};

/// Floating-point scalar usable by the tape (`f32` or `f64`).
pub trait Scalar:
    Float
    + NumAssignOps
    + FromPrimitive
    + ToPrimitive
    + ScalarOperand
    + LinalgScalar
    + Sum
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    /// Tag stored in checkpoints so precision mismatches are caught on load.
    const DTYPE: &'static str;

    fn cast(v: f64) -> Self {
        <Self as FromPrimitive>::from_f64(v).expect("finite f64 converts to scalar")
    }

    fn as_f64(self) -> f64 {
        <Self as ToPrimitive>::to_f64(&self).expect("scalar converts to f64")
    }
}

impl Scalar for f32 {
    const DTYPE: &'static str = "f32";
}

impl Scalar for f64 {
    const DTYPE: &'static str = "f64";
}

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

type BackFn<F> = Box<dyn Fn(&ArrayD<F>, &mut [Option<ArrayD<F>>])>;

struct Node<F: Scalar> {
    value: Rc<ArrayD<F>>,
    back: Option<BackFn<F>>,
    needs_grad: bool,
}

/// Gradient accumulator returned by [`Tape::backward`].
pub struct Gradients<F: Scalar> {
    slots: Vec<Option<ArrayD<F>>>,
}

impl<F: Scalar> Gradients<F> {
    /// Gradient of the backward root with respect to `v`, if any flowed.
    pub fn get(&self, v: Var) -> Option<&ArrayD<F>> {
        self.slots.get(v.0).and_then(|s| s.as_ref())
    }
}

/// Recording tape. One tape per forward/backward pass.
pub struct Tape<F: Scalar> {
    inner: RefCell<Inner<F>>,
}

struct Inner<F: Scalar> {
    nodes: Vec<Node<F>>,
    // One node per parameter name per tape, so repeated module application
    // accumulates gradients on a single slot.
    param_nodes: HashMap<String, Var>,
    param_order: Vec<(String, Var)>,
}

impl<F: Scalar> Default for Tape<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Scalar> Tape<F> {
    pub fn new() -> Self {
        Tape {
            inner: RefCell::new(Inner {
                nodes: Vec::new(),
                param_nodes: HashMap::new(),
                param_order: Vec::new(),
            }),
        }
    }

    pub fn len(&self) -> usize {
        self.inner.borrow().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: ArrayD<F>, needs_grad: bool, back: Option<BackFn<F>>) -> Var {
        let mut inner = self.inner.borrow_mut();
        let id = inner.nodes.len();
        inner.nodes.push(Node {
            value: Rc::new(value),
            back,
            needs_grad,
        });
        Var(id)
    }

    /// A node that does not require gradients (inputs, masks, targets).
    pub fn constant(&self, value: ArrayD<F>) -> Var {
        self.push(value, false, None)
    }

    /// A leaf that participates in gradient computation (used by tests that
    /// differentiate with respect to inputs).
    pub fn leaf(&self, value: ArrayD<F>) -> Var {
        self.push(value, true, None)
    }

    /// Bind a named parameter from `store`, deduplicating by name.
    pub fn param(&self, store: &ParamStore<F>, name: &str) -> Var {
        if let Some(v) = self.inner.borrow().param_nodes.get(name) {
            return *v;
        }
        let value = store.value(name).clone();
        let v = self.push(value, true, None);
        let mut inner = self.inner.borrow_mut();
        inner.param_nodes.insert(name.to_string(), v);
        inner.param_order.push((name.to_string(), v));
        v
    }

    /// Shared reference to a node's value.
    pub fn value(&self, v: Var) -> Rc<ArrayD<F>> {
        Rc::clone(&self.inner.borrow().nodes[v.0].value)
    }

    pub fn shape(&self, v: Var) -> Vec<usize> {
        self.inner.borrow().nodes[v.0].value.shape().to_vec()
    }

    /// The value of a single-element node as a plain scalar.
    pub fn scalar(&self, v: Var) -> F {
        let val = self.value(v);
        assert_eq!(val.len(), 1, "scalar() on node with {} elements", val.len());
        *val.iter().next().unwrap()
    }

    fn needs_grad(&self, v: Var) -> bool {
        self.inner.borrow().nodes[v.0].needs_grad
    }

    fn any_needs_grad(&self, vs: &[Var]) -> bool {
        vs.iter().any(|v| self.needs_grad(*v))
    }

    /// Record an op node. `back` receives the node's incoming gradient and
    /// the full slot table and must accumulate into its parents' slots.
    pub(crate) fn op(&self, value: ArrayD<F>, parents: &[Var], back: BackFn<F>) -> Var {
        if self.any_needs_grad(parents) {
            self.push(value, true, Some(back))
        } else {
            self.push(value, false, None)
        }
    }

    /// Reverse sweep from a single-element node.
    pub fn backward(&self, root: Var) -> Gradients<F> {
        let inner = self.inner.borrow();
        assert_eq!(
            inner.nodes[root.0].value.len(),
            1,
            "backward root must be a single-element node"
        );
        let mut slots: Vec<Option<ArrayD<F>>> = vec![None; inner.nodes.len()];
        slots[root.0] = Some(ArrayD::ones(inner.nodes[root.0].value.shape()));
        for id in (0..=root.0).rev() {
            let node = &inner.nodes[id];
            if !node.needs_grad {
                slots[id] = None;
                continue;
            }
            if let Some(back) = &node.back {
                if let Some(grad) = slots[id].take() {
                    back(&grad, &mut slots);
                    // Leaf gradients stay; op gradients were consumed.
                    if id != root.0 {
                        slots[id] = None;
                    }
                }
            }
        }
        Gradients { slots }
    }

    /// Collect parameter gradients by name after a backward pass.
    pub fn param_grads(&self, grads: &Gradients<F>) -> Vec<(String, ArrayD<F>)> {
        let inner = self.inner.borrow();
        inner
            .param_order
            .iter()
            .filter_map(|(name, var)| grads.get(*var).map(|g| (name.clone(), g.clone())))
            .collect()
    }
}

/// Accumulate `delta` into a gradient slot.
pub(crate) fn accumulate<F: Scalar>(slot: &mut Option<ArrayD<F>>, delta: ArrayD<F>) {
    match slot {
        None => *slot = Some(delta),
        Some(g) => {
            debug_assert_eq!(g.shape(), delta.shape(), "gradient shape mismatch");
            *g += &delta;
        }
    }
}
