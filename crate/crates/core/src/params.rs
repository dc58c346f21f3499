//! Flat, named parameter storage shared by the encoder and the heads.

use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::math;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Index of a tensor inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ParamId(pub usize);

/// All learnable weights of a model, addressable as a flat list.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, t: Tensor) -> ParamId {
        self.names.push(name.into());
        self.tensors.push(t);
        ParamId(self.tensors.len() - 1)
    }

    /// Weight matrix drawn uniform in `[-1/√fan_in, 1/√fan_in]`.
    pub fn push_uniform(
        &mut self,
        name: &str,
        fan_in: usize,
        shape: &[usize],
        rng: &mut ChaCha8Rng,
    ) -> ParamId {
        let bound = 1.0 / math::sqrt(fan_in as f64);
        let mut t = Tensor::zeros(shape);
        for v in t.data_mut() {
            *v = rng.random_range(-bound..=bound);
        }
        self.push(name, t)
    }

    pub fn push_zeros(&mut self, name: &str, shape: &[usize]) -> ParamId {
        self.push(name, Tensor::zeros(shape))
    }

    pub fn push_ones(&mut self, name: &str, shape: &[usize]) -> ParamId {
        self.push(name, Tensor::filled(shape, 1.0))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total scalar parameter count.
    pub fn numel(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor)> {
        self.names
            .iter()
            .zip(&self.tensors)
            .enumerate()
            .map(|(i, (n, t))| (ParamId(i), n.as_str(), t))
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    /// Zero-valued tensors with the same shapes, e.g. for gradients.
    pub fn zeros_like(&self) -> Vec<Tensor> {
        self.tensors.iter().map(|t| Tensor::zeros(t.shape())).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::is_finite)
    }

    /// Replaces every tensor, checking names and shapes match.
    pub fn load_from(&mut self, other: &ParamStore) -> Result<(), String> {
        if other.names != self.names {
            return Err("parameter names differ".to_string());
        }
        for (a, b) in self.tensors.iter().zip(&other.tensors) {
            if a.shape() != b.shape() {
                return Err(alloc::format!(
                    "parameter shape {:?} vs {:?}",
                    a.shape(),
                    b.shape()
                ));
            }
        }
        self.tensors.clone_from(&other.tensors);
        Ok(())
    }
}

/// Lazily registers parameters as tracked leaves on a tape, once each.
pub struct Binder<'p> {
    store: &'p ParamStore,
    vars: Vec<Option<Var>>,
    tracked: bool,
}

impl<'p> Binder<'p> {
    pub fn new(store: &'p ParamStore) -> Self {
        Binder {
            store,
            vars: alloc::vec![None; store.len()],
            tracked: true,
        }
    }

    /// Binder whose parameters never receive gradients (inference).
    pub fn frozen(store: &'p ParamStore) -> Self {
        Binder {
            tracked: false,
            ..Self::new(store)
        }
    }

    pub fn store(&self) -> &'p ParamStore {
        self.store
    }

    pub fn var(&mut self, tape: &mut Tape, id: ParamId) -> Var {
        if let Some(v) = self.vars[id.0] {
            return v;
        }
        let t = self.store.get(id).clone();
        let v = if self.tracked {
            tape.leaf(t)
        } else {
            tape.constant(t)
        };
        self.vars[id.0] = Some(v);
        v
    }

    /// Gradients per parameter after `tape.backward`; zeros for unused ones.
    pub fn grads(&self, tape: &Tape) -> Vec<Tensor> {
        self.store
            .tensors()
            .iter()
            .zip(&self.vars)
            .map(|(t, v)| {
                let mut g = Tensor::zeros(t.shape());
                if let Some(src) = v.and_then(|v| tape.grad(v)) {
                    g.data_mut().copy_from_slice(src);
                }
                g
            })
            .collect()
    }

    /// Adds this tape's gradients into `acc`.
    pub fn accumulate_grads(&self, tape: &Tape, acc: &mut [Tensor]) {
        for (a, v) in acc.iter_mut().zip(&self.vars) {
            if let Some(src) = v.and_then(|v| tape.grad(v)) {
                a.data_mut().iter_mut().zip(src).for_each(|(x, y)| *x += y);
            }
        }
    }
}
