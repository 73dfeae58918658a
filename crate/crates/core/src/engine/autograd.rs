//! Reverse-mode automatic differentiation.
//!
//! Every [`Var`] records the operation that produced it, its inputs and a
//! monotonically increasing sequence number. The sequence numbers define the
//! tape: backward walks the reachable nodes in reverse sequence order, so each
//! node is visited once and only after every consumer of it.
//!
//! Nodes whose inputs are all non-trainable keep no history, which lets an
//! inference pass free intermediates as soon as they go out of scope.

use std::cell::{Cell, RefCell};
use std::collections::{HashMap, HashSet};
use std::fmt;
use std::rc::Rc;

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::tensor::Tensor;

thread_local! {
    static NEXT_ID: Cell<u64> = const { Cell::new(0) };
}

fn next_id() -> u64 {
    NEXT_ID.with(|c| {
        let id = c.get();
        c.set(id + 1);
        id
    })
}

/// Vector-Jacobian product of one op.
///
/// Called with the output gradient, the input values, the output value and a
/// mask of which inputs need a gradient; returns one entry per input.
pub(crate) type BackwardFn<T> =
    Box<dyn Fn(&Tensor<T>, &[&Tensor<T>], &Tensor<T>, &[bool]) -> Result<Vec<Option<Tensor<T>>>>>;

struct Node<T: Real> {
    id: u64,
    op: &'static str,
    value: Tensor<T>,
    requires_grad: bool,
    parents: Vec<Var<T>>,
    backward: Option<BackwardFn<T>>,
    grad: RefCell<Option<Tensor<T>>>,
    consumed: Cell<bool>,
}

/// A tensor value on the gradient tape.
pub struct Var<T: Real>(Rc<Node<T>>);

impl<T: Real> Clone for Var<T> {
    fn clone(&self) -> Self {
        Var(Rc::clone(&self.0))
    }
}

impl<T: Real> fmt::Debug for Var<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.0.id)
            .field("op", &self.0.op)
            .field("shape", &self.0.value.shape())
            .field("requires_grad", &self.0.requires_grad)
            .finish()
    }
}

impl<T: Real> Var<T> {
    fn leaf(value: Tensor<T>, requires_grad: bool) -> Self {
        Var(Rc::new(Node {
            id: next_id(),
            op: "leaf",
            value,
            requires_grad,
            parents: Vec::new(),
            backward: None,
            grad: RefCell::new(None),
            consumed: Cell::new(false),
        }))
    }

    /// Trainable leaf; receives a gradient on backward.
    pub fn parameter(value: Tensor<T>) -> Self {
        Self::leaf(value, true)
    }

    /// Detached leaf; never accumulates gradient.
    pub fn constant(value: Tensor<T>) -> Self {
        Self::leaf(value, false)
    }

    pub(crate) fn from_op(
        op: &'static str,
        value: Tensor<T>,
        parents: Vec<Var<T>>,
        backward: BackwardFn<T>,
    ) -> Self {
        let requires_grad = parents.iter().any(|p| p.requires_grad());
        let (parents, backward) = if requires_grad {
            (parents, Some(backward))
        } else {
            (Vec::new(), None)
        };
        Var(Rc::new(Node {
            id: next_id(),
            op,
            value,
            requires_grad,
            parents,
            backward,
            grad: RefCell::new(None),
            consumed: Cell::new(false),
        }))
    }

    pub fn value(&self) -> &Tensor<T> {
        &self.0.value
    }

    pub fn shape(&self) -> &[usize] {
        self.0.value.shape()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        self.0.op == "leaf"
    }

    pub fn op_name(&self) -> &'static str {
        self.0.op
    }

    /// Accumulated gradient of a trainable leaf, if backward reached it.
    pub fn grad(&self) -> Option<Tensor<T>> {
        self.0.grad.borrow().clone()
    }

    pub fn zero_grad(&self) {
        *self.0.grad.borrow_mut() = None;
    }

    /// Inputs recorded on the tape; empty for leaves and detached results.
    pub fn parents(&self) -> &[Var<T>] {
        &self.0.parents
    }

    fn id(&self) -> u64 {
        self.0.id
    }
}

/// Every node the value of `root` depends on through the tape, including
/// `root`, in the order they were computed.
pub fn tape<T: Real>(root: &Var<T>) -> Vec<Var<T>> {
    let mut nodes = reverse_tape(root);
    nodes.reverse();
    nodes
}

/// Nodes reachable from `root` through trainable edges, in reverse tape order.
fn reverse_tape<T: Real>(root: &Var<T>) -> Vec<Var<T>> {
    let mut seen = HashSet::new();
    let mut stack = vec![root.clone()];
    let mut nodes = Vec::new();
    while let Some(v) = stack.pop() {
        if !seen.insert(v.id()) {
            continue;
        }
        for p in &v.0.parents {
            if p.requires_grad() && !seen.contains(&p.id()) {
                stack.push(p.clone());
            }
        }
        nodes.push(v);
    }
    nodes.sort_by_key(|v| std::cmp::Reverse(v.id()));
    nodes
}

/// Back-propagates a scalar `loss`, adding `d loss / d leaf` into every
/// trainable leaf it depends on.
///
/// The graph is consumed: calling this twice on the same graph is an error.
pub fn backward<T: Real>(loss: &Var<T>) -> Result<()> {
    if !loss.value().is_scalar() {
        return Err(Error::Backward(format!(
            "loss must be a scalar, got shape {:?}",
            loss.shape()
        )));
    }
    if !loss.requires_grad() {
        return Err(Error::Backward(
            "loss is detached from every trainable leaf".into(),
        ));
    }
    let order = reverse_tape(loss);
    if order.iter().any(|v| v.0.consumed.get()) {
        return Err(Error::Backward(
            "graph already consumed; run the forward pass again".into(),
        ));
    }
    let mut grads: HashMap<u64, Tensor<T>> = HashMap::new();
    grads.insert(loss.id(), Tensor::ones(loss.shape()));
    for node in &order {
        let Some(g) = grads.remove(&node.id()) else {
            continue;
        };
        if node.is_leaf() {
            let mut slot = node.0.grad.borrow_mut();
            match slot.as_mut() {
                Some(acc) => acc.add_assign(&g)?,
                None => *slot = Some(g),
            }
            continue;
        }
        node.0.consumed.set(true);
        let backward = node
            .0
            .backward
            .as_ref()
            .expect("trainable interior node keeps its backward");
        let inputs: Vec<&Tensor<T>> = node.0.parents.iter().map(|p| p.value()).collect();
        let needs: Vec<bool> = node.0.parents.iter().map(|p| p.requires_grad()).collect();
        let parent_grads = backward(&g, &inputs, node.value(), &needs)?;
        for ((parent, pg), need) in node.0.parents.iter().zip(parent_grads).zip(needs) {
            let Some(pg) = pg else { continue };
            if !need {
                continue;
            }
            if pg.shape() != parent.shape() {
                return Err(Error::Backward(format!(
                    "{} produced gradient of shape {:?} for input of shape {:?}",
                    node.op_name(),
                    pg.shape(),
                    parent.shape()
                )));
            }
            match grads.get_mut(&parent.id()) {
                Some(acc) => acc.add_assign(&pg)?,
                None => {
                    grads.insert(parent.id(), pg);
                }
            }
        }
    }
    Ok(())
}
