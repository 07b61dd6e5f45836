//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Graph`] records every operation applied during one forward pass.
//! Nodes are appended in evaluation order, so walking the tape backwards is a
//! valid topological order for the backward sweep.

use std::cell::{Ref, RefCell};
use std::rc::Rc;

use crate::error::{Result, TensorError};
use crate::params::{ParamId, ParamStore};
use crate::tensor::{Float, Tensor};

/// Handle to a node on a [`Graph`] tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Backward rule: receives the output gradient and a mask telling which
/// parents need a gradient; returns one entry per parent.
pub type BackwardFn<T> = Box<dyn Fn(&Tensor<T>, &[bool]) -> Vec<Option<Tensor<T>>>>;

struct Node<T> {
    value: Rc<Tensor<T>>,
    requires_grad: bool,
    parents: Vec<Var>,
    backward: Option<BackwardFn<T>>,
}

pub struct Graph<T: Float> {
    nodes: RefCell<Vec<Node<T>>>,
    params: RefCell<Vec<(ParamId, Var)>>,
}

impl<T: Float> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Float> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: RefCell::new(Vec::new()), params: RefCell::new(Vec::new()) }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, node: Node<T>) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(node);
        Var(nodes.len() - 1)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn leaf(&self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.push(Node { value: Rc::new(value), requires_grad, parents: Vec::new(), backward: None })
    }

    /// Leaf bound to a stored parameter; its gradient is reported by
    /// [`Gradients::params`].
    pub fn param(&self, store: &ParamStore<T>, id: ParamId) -> Var {
        let p = store.get(id);
        let v = self.leaf(p.value.clone(), p.trainable);
        self.params.borrow_mut().push((id, v));
        v
    }

    pub fn value(&self, v: Var) -> Rc<Tensor<T>> {
        Rc::clone(&self.nodes.borrow()[v.0].value)
    }

    pub fn shape(&self, v: Var) -> Vec<usize> {
        self.nodes.borrow()[v.0].value.shape().to_vec()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes.borrow()[v.0].requires_grad
    }

    pub(crate) fn values(&self, vars: &[Var]) -> Vec<Rc<Tensor<T>>> {
        let nodes: Ref<'_, Vec<Node<T>>> = self.nodes.borrow();
        vars.iter().map(|v| Rc::clone(&nodes[v.0].value)).collect()
    }

    /// Records an operation. `backward` is dropped when no parent needs a
    /// gradient.
    pub fn custom(
        &self,
        parents: &[Var],
        value: Tensor<T>,
        backward: impl Fn(&Tensor<T>, &[bool]) -> Vec<Option<Tensor<T>>> + 'static,
    ) -> Var {
        let requires_grad = parents.iter().any(|&p| self.requires_grad(p));
        self.push(Node {
            value: Rc::new(value),
            requires_grad,
            parents: parents.to_vec(),
            backward: if requires_grad { Some(Box::new(backward)) } else { None },
        })
    }

    /// Reverse sweep from `root`, seeded with ones.
    pub fn backward(&self, root: Var) -> Result<Gradients<T>> {
        let nodes = self.nodes.borrow();
        let mut grads: Vec<Option<Tensor<T>>> = (0..nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Tensor::ones(nodes[root.0].value.shape()));
        for id in (0..=root.0).rev() {
            let node = &nodes[id];
            let Some(backward) = node.backward.as_ref() else { continue };
            let Some(grad) = grads[id].take() else { continue };
            let mask: Vec<bool> = node.parents.iter().map(|p| nodes[p.0].requires_grad).collect();
            let parent_grads = backward(&grad, &mask);
            if parent_grads.len() != node.parents.len() {
                return Err(TensorError::invalid(
                    "backward",
                    format!("node {id} returned {} grads for {} parents", parent_grads.len(), node.parents.len()),
                ));
            }
            for ((parent, pg), needed) in node.parents.iter().zip(parent_grads).zip(mask) {
                let Some(pg) = pg else { continue };
                if !needed {
                    continue;
                }
                let expected = nodes[parent.0].value.shape();
                if pg.shape() != expected {
                    return Err(TensorError::shape(
                        "backward",
                        format!("gradient {:?} for node of shape {:?}", pg.shape(), expected),
                    ));
                }
                match &mut grads[parent.0] {
                    Some(acc) => acc.add_assign(&pg)?,
                    slot @ None => *slot = Some(pg),
                }
            }
        }
        Ok(Gradients { grads, params: self.params.borrow().clone() })
    }
}

/// Result of a backward sweep.
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
    params: Vec<(ParamId, Var)>,
}

impl<T: Float> Gradients<T> {
    /// Gradient of a leaf (or of the root). Interior gradients are released
    /// during the sweep.
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradients of every trainable parameter bound on the tape, summed over
    /// repeated bindings and ordered by parameter id.
    pub fn params(&self) -> Vec<(ParamId, Tensor<T>)> {
        let mut out: Vec<(ParamId, Tensor<T>)> = Vec::new();
        for &(id, var) in &self.params {
            let Some(g) = self.get(var) else { continue };
            match out.iter_mut().find(|(pid, _)| *pid == id) {
                Some((_, acc)) => acc.add_assign(g).expect("same parameter, same shape"),
                None => out.push((id, g.clone())),
            }
        }
        out.sort_by_key(|(id, _)| id.index());
        out
    }
}
