//! Dynamic reverse-mode tape.
//!
//! Every differentiable operation executed through a [`Tape`] appends a node
//! holding a backward closure. Closures own whatever forward values they need
//! (shared through `Arc`), so intermediate activations are released as soon as
//! both the forward variables and the backward pass are done with them.

use std::cell::{Cell, RefCell};
use std::collections::{HashMap, HashSet};
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::scalar::Float;
use crate::tensor::Tensor;

/// Backward closure: receives the output gradient and, per input, whether a
/// gradient is wanted; returns one optional gradient per input.
pub type BackwardFn<T> = Box<dyn FnOnce(&[T], &[bool]) -> Vec<Option<Vec<T>>>>;

struct Node<T> {
    inputs: Vec<Option<usize>>,
    backward: Option<BackwardFn<T>>,
}

/// A value flowing through the tape. Cheap to clone.
#[derive(Clone, Debug)]
pub struct Var<T: Float = f32> {
    value: Arc<Tensor<T>>,
    node: Option<usize>,
}

impl<T: Float> Var<T> {
    pub fn value(&self) -> &Tensor<T> {
        &self.value
    }

    pub fn shared(&self) -> Arc<Tensor<T>> {
        Arc::clone(&self.value)
    }

    pub fn shape(&self) -> &[usize] {
        self.value.shape()
    }

    pub fn data(&self) -> &[T] {
        self.value.data()
    }

    /// Whether gradients flow back through this value.
    pub fn requires_grad(&self) -> bool {
        self.node.is_some()
    }

    pub fn node_id(&self) -> Option<usize> {
        self.node
    }
}

pub struct Tape<T: Float = f32> {
    nodes: RefCell<Vec<Node<T>>>,
    bindings: RefCell<Vec<(usize, usize)>>,
    grad_enabled: bool,
    consumed: Cell<bool>,
}

impl<T: Float> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Float> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: RefCell::new(Vec::new()),
            bindings: RefCell::new(Vec::new()),
            grad_enabled: true,
            consumed: Cell::new(false),
        }
    }

    /// A tape that records nothing; every result is a constant.
    pub fn no_grad() -> Self {
        Tape { grad_enabled: false, ..Self::new() }
    }

    pub fn grad_enabled(&self) -> bool {
        self.grad_enabled
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Input value. With `requires_grad == false` it never receives a gradient.
    pub fn leaf(&self, value: Tensor<T>, requires_grad: bool) -> Var<T> {
        self.leaf_shared(Arc::new(value), requires_grad)
    }

    pub fn leaf_shared(&self, value: Arc<Tensor<T>>, requires_grad: bool) -> Var<T> {
        if !(requires_grad && self.grad_enabled) {
            return Var { value, node: None };
        }
        let id = self.push(Node { inputs: Vec::new(), backward: None });
        Var { value, node: Some(id) }
    }

    pub fn constant(&self, value: Tensor<T>) -> Var<T> {
        Var { value: Arc::new(value), node: None }
    }

    /// Leaf bound to an external parameter slot; its gradient is reported by
    /// [`Gradients::bound`] under `slot`.
    pub fn param(&self, slot: usize, value: Arc<Tensor<T>>, trainable: bool) -> Var<T> {
        let var = self.leaf_shared(value, trainable);
        if let Some(id) = var.node {
            self.bindings.borrow_mut().push((slot, id));
        }
        var
    }

    fn push(&self, node: Node<T>) -> usize {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(node);
        nodes.len() - 1
    }

    /// Record the result of a differentiable operation.
    ///
    /// The closure is kept only if some input requires a gradient.
    pub fn record<F>(&self, value: Tensor<T>, inputs: &[&Var<T>], backward: F) -> Var<T>
    where
        F: FnOnce(&[T], &[bool]) -> Vec<Option<Vec<T>>> + 'static,
    {
        let value = Arc::new(value);
        if !self.grad_enabled || inputs.iter().all(|v| v.node.is_none()) {
            return Var { value, node: None };
        }
        let id = self.push(Node {
            inputs: inputs.iter().map(|v| v.node).collect(),
            backward: Some(Box::new(backward)),
        });
        Var { value, node: Some(id) }
    }

    pub fn backward(&self, loss: &Var<T>) -> Result<Gradients<T>> {
        self.backward_retaining(loss, &[])
    }

    /// Reverse pass from a scalar loss. Gradients of leaves are always kept;
    /// gradients of the `retain` intermediates are kept as well.
    pub fn backward_retaining(&self, loss: &Var<T>, retain: &[&Var<T>]) -> Result<Gradients<T>> {
        if loss.value.len() != 1 {
            return Err(Error::NonScalarLoss { shape: loss.shape().to_vec() });
        }
        if self.consumed.replace(true) {
            return Err(Error::TapeConsumed);
        }
        let mut nodes = std::mem::take(&mut *self.nodes.borrow_mut());
        let bindings = std::mem::take(&mut *self.bindings.borrow_mut());
        let mut out = Gradients { grads: HashMap::new(), bindings };
        let Some(root) = loss.node else {
            return Ok(out);
        };
        let keep: HashSet<usize> = retain.iter().filter_map(|v| v.node).collect();
        let mut grads: Vec<Option<Vec<T>>> = (0..nodes.len()).map(|_| None).collect();
        grads[root] = Some(vec![T::one()]);

        for id in (0..=root).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &mut nodes[id];
            match node.backward.take() {
                Some(f) => {
                    let needs: Vec<bool> = node.inputs.iter().map(Option::is_some).collect();
                    let results = f(&g, &needs);
                    debug_assert_eq!(results.len(), node.inputs.len());
                    for (input, r) in node.inputs.iter().zip(results) {
                        if let (Some(pid), Some(r)) = (input, r) {
                            accumulate(&mut grads[*pid], r);
                        }
                    }
                    if keep.contains(&id) {
                        out.grads.insert(id, g);
                    }
                }
                None => {
                    out.grads.insert(id, g);
                }
            }
        }
        Ok(out)
    }
}

fn accumulate<T: Float>(slot: &mut Option<Vec<T>>, g: Vec<T>) {
    match slot {
        None => *slot = Some(g),
        Some(acc) => {
            debug_assert_eq!(acc.len(), g.len());
            for (a, b) in acc.iter_mut().zip(g) {
                *a += b;
            }
        }
    }
}

/// Result of a backward pass.
pub struct Gradients<T: Float = f32> {
    grads: HashMap<usize, Vec<T>>,
    bindings: Vec<(usize, usize)>,
}

impl<T: Float> Gradients<T> {
    /// Gradient with respect to a leaf (or retained intermediate).
    pub fn get(&self, var: &Var<T>) -> Option<Tensor<T>> {
        let id = var.node?;
        let g = self.grads.get(&id)?;
        Some(Tensor::from_parts(var.shape().to_vec(), g.clone()))
    }

    pub fn get_slice(&self, var: &Var<T>) -> Option<&[T]> {
        self.grads.get(&var.node?).map(Vec::as_slice)
    }

    /// `(slot, gradient)` for every parameter bound through [`Tape::param`]
    /// that received a gradient. A slot bound more than once appears once per
    /// binding.
    pub fn bound(&self) -> impl Iterator<Item = (usize, &[T])> + '_ {
        self.bindings
            .iter()
            .filter_map(|&(slot, id)| self.grads.get(&id).map(|g| (slot, g.as_slice())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn non_scalar_loss_is_rejected() {
        let tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::ones(&[2, 2]), true);
        assert!(matches!(tape.backward(&x), Err(Error::NonScalarLoss { .. })));
    }

    #[test]
    fn untracked_leaf_never_gets_gradient() {
        let tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::ones(&[3]), false);
        let y = tape.leaf(Tensor::ones(&[3]), true);
        let z = tape.mul(&x, &y).unwrap();
        let loss = tape.sum(&z);
        let g = tape.backward(&loss).unwrap();
        assert!(g.get(&x).is_none());
        assert_eq!(g.get(&y).unwrap().data(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn second_backward_on_same_tape_fails() {
        let tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::ones(&[3]), true);
        let loss = tape.sum(&x);
        tape.backward(&loss).unwrap();
        assert_eq!(tape.backward(&loss).err(), Some(Error::TapeConsumed));
    }

    #[test]
    fn shared_input_accumulates() {
        // loss = sum(x * x) + sum(x)  => grad = 2x + 1
        let tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::new(&[3], vec![1.0, -2.0, 0.5]).unwrap(), true);
        let sq = tape.mul(&x, &x).unwrap();
        let a = tape.sum(&sq);
        let b = tape.sum(&x);
        let loss = tape.add(&a, &b).unwrap();
        let g = tape.backward(&loss).unwrap().get(&x).unwrap();
        assert_eq!(g.data(), &[3.0, -3.0, 2.0]);
    }

    #[test]
    fn no_grad_tape_records_nothing() {
        let tape = Tape::<f32>::no_grad();
        let x = tape.leaf(Tensor::ones(&[4]), true);
        let y = tape.relu(&x);
        assert!(!y.requires_grad());
        assert!(tape.is_empty());
    }
}
