//! Named parameter collections and their binding to a tape.

use std::cell::RefCell;
use std::collections::BTreeMap;

use rand::Rng;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Named tensors making up a model; iteration order is by name.
///
/// Values are held at single precision: every inserted tensor is rounded
/// to the nearest `f32`, so checkpoints store them exactly.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    tensors: BTreeMap<String, Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, mut tensor: Tensor) {
        for v in tensor.data_mut() {
            *v = *v as f32 as f64;
        }
        self.tensors.insert(name.into(), tensor);
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.tensors.get(name).ok_or_else(|| Error::contract(format!("missing parameter {name:?}")))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn numel(&self) -> usize {
        self.tensors.values().map(Tensor::numel).sum()
    }

    /// Keeps only the entries whose name satisfies `keep`.
    pub fn retain(&mut self, mut keep: impl FnMut(&str) -> bool) {
        self.tensors.retain(|k, _| keep(k));
    }

    /// Copies every entry of `other` whose name starts with one of
    /// `prefixes`, overwriting existing values.
    pub fn overwrite_from(&mut self, other: &ParamStore, prefixes: &[&str]) -> usize {
        let mut copied = 0;
        for (name, t) in other.iter() {
            if prefixes.iter().any(|p| name.starts_with(p)) {
                self.insert(name, t.clone());
                copied += 1;
            }
        }
        copied
    }

    /// Bit-for-bit equality of names, shapes and values.
    pub fn bits_eq(&self, other: &ParamStore) -> bool {
        self.len() == other.len() && self.tensors.iter().zip(&other.tensors).all(|((ka, a), (kb, b))| ka == kb && a.bits_eq(b))
    }
}

impl FromIterator<(String, Tensor)> for ParamStore {
    fn from_iter<I: IntoIterator<Item = (String, Tensor)>>(iter: I) -> Self {
        let mut store = Self::new();
        for (name, t) in iter {
            store.insert(name, t);
        }
        store
    }
}

/// Gradients keyed by parameter name.
#[derive(Clone, Debug, Default)]
pub struct Gradients {
    grads: BTreeMap<String, Tensor>,
}

impl Gradients {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, grad: Tensor) {
        self.grads.insert(name.into(), grad);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.grads.get(name)
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.grads.iter().map(|(k, v)| (k.as_str(), v))
    }

    /// Adds `other` into `self`, entry by entry.
    pub fn accumulate(&mut self, other: Gradients) {
        for (name, g) in other.grads {
            match self.grads.get_mut(&name) {
                Some(acc) => acc.data_mut().iter_mut().zip(g.data()).for_each(|(a, b)| *a += b),
                None => {
                    self.grads.insert(name, g);
                }
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for g in self.grads.values_mut() {
            g.data_mut().iter_mut().for_each(|v| *v *= factor);
        }
    }

    pub fn retain(&mut self, mut keep: impl FnMut(&str) -> bool) {
        self.grads.retain(|k, _| keep(k));
    }
}

/// A [`ParamStore`] exposed as tape variables for one forward pass.
///
/// Each parameter becomes a leaf the first time it is requested.
pub struct Bound<'t, 's> {
    tape: &'t Tape,
    store: &'s ParamStore,
    trainable: bool,
    vars: RefCell<BTreeMap<String, Var<'t>>>,
}

impl<'t, 's> Bound<'t, 's> {
    /// Parameters that will receive gradients.
    pub fn trainable(tape: &'t Tape, store: &'s ParamStore) -> Self {
        Self { tape, store, trainable: true, vars: RefCell::default() }
    }

    /// Parameters recorded as constants, for inference.
    pub fn frozen(tape: &'t Tape, store: &'s ParamStore) -> Self {
        Self { tape, store, trainable: false, vars: RefCell::default() }
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn store(&self) -> &'s ParamStore {
        self.store
    }

    pub fn var(&self, name: &str) -> Result<Var<'t>> {
        if let Some(v) = self.vars.borrow().get(name) {
            return Ok(*v);
        }
        let t = self.store.get(name)?.clone();
        let v = if self.trainable { self.tape.leaf(t) } else { self.tape.constant(t) };
        self.vars.borrow_mut().insert(name.to_string(), v);
        Ok(v)
    }

    /// Uses `var` for parameter `name` instead of a fresh leaf.
    pub fn bind(&self, name: &str, var: Var<'t>) {
        self.vars.borrow_mut().insert(name.to_string(), var);
    }

    /// Gradients of every parameter used so far, after [`Tape::backward`].
    pub fn gradients(&self) -> Gradients {
        let mut out = Gradients::new();
        for (name, v) in self.vars.borrow().iter() {
            if let Some(g) = v.grad() {
                out.insert(name.clone(), g);
            }
        }
        out
    }
}

/// Glorot-uniform initialisation.
pub fn xavier_uniform<R: Rng + ?Sized>(shape: &[usize], fan_in: usize, fan_out: usize, rng: &mut R) -> Tensor {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Tensor::uniform(shape.to_vec(), -bound, bound, rng)
}

/// He-uniform initialisation for ReLU layers.
pub fn he_uniform<R: Rng + ?Sized>(shape: &[usize], fan_in: usize, rng: &mut R) -> Tensor {
    let bound = (6.0 / fan_in as f64).sqrt();
    Tensor::uniform(shape.to_vec(), -bound, bound, rng)
}
