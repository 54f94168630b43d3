use std::collections::HashMap;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::scalar::Float;
use crate::tape::{Gradients, Tape, Var};
use crate::tensor::Tensor;

/// Handle into a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    /// Optimized; counted as a model parameter.
    Trainable,
    /// Persistent state that is not optimized (e.g. running statistics).
    Buffer,
}

#[derive(Clone, Debug)]
pub struct ParamEntry<T: Float> {
    pub name: String,
    pub kind: ParamKind,
    value: Arc<Tensor<T>>,
    grad: Option<Vec<T>>,
}

impl<T: Float> ParamEntry<T> {
    pub fn value(&self) -> &Tensor<T> {
        &self.value
    }

    pub fn grad(&self) -> Option<&[T]> {
        self.grad.as_deref()
    }

    pub fn is_trainable(&self) -> bool {
        self.kind == ParamKind::Trainable
    }
}

/// Ordered, uniquely named registry of parameters and buffers.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<T: Float = f32> {
    entries: Vec<ParamEntry<T>>,
    index: HashMap<String, usize>,
}

impl<T: Float> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore { entries: Vec::new(), index: HashMap::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>, kind: ParamKind) -> Result<ParamId> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::invalid("param_store", format!("duplicate parameter name `{name}`")));
        }
        let id = self.entries.len();
        self.index.insert(name.clone(), id);
        self.entries.push(ParamEntry { name, kind, value: Arc::new(value), grad: None });
        Ok(ParamId(id))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).map(|&i| ParamId(i))
    }

    pub fn entry(&self, id: ParamId) -> &ParamEntry<T> {
        &self.entries[id.0]
    }

    pub fn entries(&self) -> impl Iterator<Item = (ParamId, &ParamEntry<T>)> {
        self.entries.iter().enumerate().map(|(i, e)| (ParamId(i), e))
    }

    pub fn value(&self, id: ParamId) -> &Tensor<T> {
        &self.entries[id.0].value
    }

    /// Mutable access; copies the tensor only if a tape still shares it.
    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        Arc::make_mut(&mut self.entries[id.0].value)
    }

    pub fn set(&mut self, id: ParamId, value: Tensor<T>) -> Result<()> {
        let e = &mut self.entries[id.0];
        if e.value.shape() != value.shape() {
            return Err(Error::shape(
                "param_store",
                format!("`{}` has shape {:?}, got {:?}", e.name, e.value.shape(), value.shape()),
            ));
        }
        e.value = Arc::new(value);
        Ok(())
    }

    pub fn grad(&self, id: ParamId) -> Option<&[T]> {
        self.entries[id.0].grad.as_deref()
    }

    /// Put a parameter on the tape. Buffers enter as constants.
    pub fn bind(&self, tape: &Tape<T>, id: ParamId) -> Var<T> {
        let e = &self.entries[id.0];
        tape.param(id.0, Arc::clone(&e.value), e.is_trainable())
    }

    /// Add the gradients of every bound parameter into the store's
    /// gradient buffers. Repeated calls accumulate.
    pub fn accumulate(&mut self, grads: &Gradients<T>) {
        for (slot, g) in grads.bound() {
            let e = &mut self.entries[slot];
            match e.grad.as_mut() {
                Some(acc) => acc.iter_mut().zip(g).for_each(|(a, &b)| *a += b),
                None => e.grad = Some(g.to_vec()),
            }
        }
    }

    pub fn zero_grad(&mut self) {
        for e in &mut self.entries {
            e.grad = None;
        }
    }

    /// Number of trainable scalars.
    pub fn count_trainable(&self) -> usize {
        self.entries.iter().filter(|e| e.is_trainable()).map(|e| e.value.len()).sum()
    }

    pub fn count_trainable_with_prefix(&self, prefix: &str) -> usize {
        self.entries
            .iter()
            .filter(|e| e.is_trainable() && e.name.starts_with(prefix))
            .map(|e| e.value.len())
            .sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicate_names_rejected() {
        let mut s = ParamStore::<f32>::new();
        s.add("a", Tensor::zeros(&[2]), ParamKind::Trainable).unwrap();
        assert!(s.add("a", Tensor::zeros(&[2]), ParamKind::Buffer).is_err());
    }

    #[test]
    fn counts_only_trainable() {
        let mut s = ParamStore::<f32>::new();
        s.add("w", Tensor::zeros(&[10, 256]), ParamKind::Trainable).unwrap();
        s.add("b", Tensor::zeros(&[10]), ParamKind::Trainable).unwrap();
        s.add("rm", Tensor::zeros(&[10]), ParamKind::Buffer).unwrap();
        assert_eq!(s.count_trainable(), 2570);
    }

    #[test]
    fn repeated_accumulate_sums() {
        let mut s = ParamStore::<f64>::new();
        let id = s.add("x", Tensor::new(&[2], vec![1.0, 2.0]).unwrap(), ParamKind::Trainable).unwrap();
        for _ in 0..2 {
            let tape = Tape::new();
            let x = s.bind(&tape, id);
            let loss = tape.sum(&tape.square(&x));
            let g = tape.backward(&loss).unwrap();
            s.accumulate(&g);
        }
        assert_eq!(s.grad(id).unwrap(), &[4.0, 8.0]);
        s.zero_grad();
        assert!(s.grad(id).is_none());
    }

    #[test]
    fn buffers_receive_no_gradient() {
        let mut s = ParamStore::<f64>::new();
        let id = s.add("rm", Tensor::ones(&[3]), ParamKind::Buffer).unwrap();
        let tape = Tape::new();
        let v = s.bind(&tape, id);
        assert!(!v.requires_grad());
    }
}
