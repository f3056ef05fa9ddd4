use std::cell::RefCell;
use std::fmt;
use std::rc::Rc;

use super::{all_finite, Tensor};
use crate::error::{Error, Result};

/// Backward rule: receives the output gradient and a mask of which parents
/// want a gradient, returns one optional gradient per parent.
pub(crate) type BackwardFn = Box<dyn Fn(&[f64], &[bool]) -> Vec<Option<Vec<f64>>>>;

struct Node {
    op: &'static str,
    parents: Vec<usize>,
    backward: Option<BackwardFn>,
}

/// Records differentiable operations in creation order.
///
/// Only operations with at least one tracked operand are stored, so an
/// inference tape (or a computation over constants) keeps no backward state
/// and intermediate values are released as soon as their `Var` is dropped.
pub struct Tape {
    nodes: RefCell<Vec<Option<Node>>>,
    bindings: RefCell<Vec<(usize, usize)>>,
    grad_enabled: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl fmt::Debug for Tape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tape")
            .field("len", &self.nodes.borrow().len())
            .field("grad_enabled", &self.grad_enabled)
            .finish()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
            bindings: RefCell::new(Vec::new()),
            grad_enabled: true,
        }
    }

    /// A tape that never records backward rules.
    pub fn no_grad() -> Self {
        Self {
            grad_enabled: false,
            ..Self::new()
        }
    }

    pub fn grad_enabled(&self) -> bool {
        self.grad_enabled
    }

    /// Number of operation slots allocated so far (tracked or not).
    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Input leaf; tracked when the tensor requires a gradient.
    pub fn leaf(&self, t: Tensor) -> Var<'_> {
        let tracked = self.grad_enabled && t.requires_grad();
        self.alloc("leaf", Rc::new(t), tracked, Vec::new(), None)
    }

    /// Untracked input.
    pub fn constant(&self, t: Tensor) -> Var<'_> {
        self.alloc("constant", Rc::new(t), false, Vec::new(), None)
    }

    /// Leaf carrying an external key, used to route gradients back to a
    /// parameter store.
    pub(crate) fn bound_leaf(&self, t: Tensor, key: usize) -> Var<'_> {
        let v = self.leaf(t);
        if v.tracked {
            self.bindings.borrow_mut().push((v.id, key));
        }
        v
    }

    pub(crate) fn bindings(&self) -> Vec<(usize, usize)> {
        self.bindings.borrow().clone()
    }

    fn alloc(
        &self,
        op: &'static str,
        value: Rc<Tensor>,
        tracked: bool,
        parents: Vec<usize>,
        backward: Option<BackwardFn>,
    ) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        let id = nodes.len();
        nodes.push(tracked.then(|| Node {
            op,
            parents,
            backward,
        }));
        Var {
            tape: self,
            id,
            value,
            tracked,
        }
    }

    /// Appends an operation result. The backward rule is kept only when some
    /// parent is tracked.
    pub(crate) fn push<'t, F>(
        &'t self,
        op: &'static str,
        value: Tensor,
        parents: &[&Var<'t>],
        backward: F,
    ) -> Result<Var<'t>>
    where
        F: Fn(&[f64], &[bool]) -> Vec<Option<Vec<f64>>> + 'static,
    {
        for p in parents {
            debug_assert!(std::ptr::eq(p.tape, self), "operands from different tapes");
        }
        value.ensure_finite(op)?;
        let tracked = self.grad_enabled && parents.iter().any(|p| p.tracked);
        let (ids, bw): (Vec<usize>, Option<BackwardFn>) = if tracked {
            (
                parents.iter().map(|p| p.id).collect(),
                Some(Box::new(backward)),
            )
        } else {
            (Vec::new(), None)
        };
        Ok(self.alloc(op, Rc::new(value), tracked, ids, bw))
    }

    /// Reverse pass from a scalar loss.
    ///
    /// Gradients of leaves used more than once accumulate additively.
    pub fn backward(&self, loss: &Var<'_>) -> Result<Grads> {
        if loss.value.numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                loss.value.shape()
            )));
        }
        let nodes = self.nodes.borrow();
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; nodes.len()];
        if !loss.tracked {
            return Ok(Grads { grads });
        }
        grads[loss.id] = Some(vec![1.0]);
        for id in (0..=loss.id).rev() {
            let Some(node) = &nodes[id] else { continue };
            let Some(rule) = &node.backward else { continue };
            let Some(g) = grads[id].take() else { continue };
            let need: Vec<bool> = node.parents.iter().map(|&p| nodes[p].is_some()).collect();
            let parent_grads = rule(&g, &need);
            debug_assert_eq!(parent_grads.len(), node.parents.len());
            for ((&p, pg), wanted) in node.parents.iter().zip(parent_grads).zip(&need) {
                let (Some(pg), true) = (pg, *wanted) else { continue };
                if !all_finite(&pg) {
                    return Err(Error::NonFinite(format!("backward of {}", node.op)));
                }
                match &mut grads[p] {
                    Some(acc) => acc.iter_mut().zip(&pg).for_each(|(a, b)| *a += b),
                    slot @ None => *slot = Some(pg),
                }
            }
        }
        Ok(Grads { grads })
    }
}

/// Leaf gradients produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Grads {
    grads: Vec<Option<Vec<f64>>>,
}

impl Grads {
    /// Gradient of the loss with respect to a leaf, if it was reached.
    pub fn wrt(&self, v: &Var<'_>) -> Option<&[f64]> {
        self.grads.get(v.id).and_then(|g| g.as_deref())
    }

    pub(crate) fn by_id(&self, id: usize) -> Option<&[f64]> {
        self.grads.get(id).and_then(|g| g.as_deref())
    }
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone)]
pub struct Var<'t> {
    pub(crate) tape: &'t Tape,
    pub(crate) id: usize,
    pub(crate) value: Rc<Tensor>,
    pub(crate) tracked: bool,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.id)
            .field("shape", &self.value.shape())
            .field("tracked", &self.tracked)
            .finish()
    }
}

impl<'t> Var<'t> {
    pub fn value(&self) -> &Tensor {
        &self.value
    }

    pub fn shape(&self) -> &[usize] {
        self.value.shape()
    }

    pub fn data(&self) -> &[f64] {
        self.value.data()
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn is_tracked(&self) -> bool {
        self.tracked
    }

    /// Copies the value out, detached from the tape.
    pub fn to_tensor(&self) -> Tensor {
        let mut t = (*self.value).clone();
        t.set_requires_grad(false);
        t
    }
}
