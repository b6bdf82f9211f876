use std::cell::RefCell;

use crate::autodiff::{Gradients, Tape, Var};
use crate::digest::Fnv1a;
use crate::tensor::{Float, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub value: Tensor<T>,
    /// Frozen parameters are bound as constants and skipped by the optimizer.
    pub trainable: bool,
    /// Whether decoupled weight decay applies (off for biases, norms, tokens, tables).
    pub decay: bool,
}

/// Flat, ordered registry of every parameter tensor of a model.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore<T> {
    params: Vec<Param<T>>,
}

impl<T: Float> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore { params: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>, decay: bool) -> ParamId {
        let name = name.into();
        debug_assert!(self.find(&name).is_none(), "duplicate parameter name {name}");
        self.params.push(Param {
            name,
            value,
            trainable: true,
            decay,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Param<T> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param<T> {
        &mut self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor<T> {
        &self.params[id.0].value
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param<T>)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn set_trainable(&mut self, id: ParamId, trainable: bool) {
        self.params[id.0].trainable = trainable;
    }

    /// Total number of scalar parameters.
    pub fn count(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    /// Number of scalars in parameters whose name starts with `prefix`.
    pub fn count_prefix(&self, prefix: &str) -> usize {
        self.params
            .iter()
            .filter(|p| p.name.starts_with(prefix))
            .map(|p| p.value.numel())
            .sum()
    }

    /// FNV-1a over names, shapes and little-endian values.
    pub fn checksum(&self) -> u64 {
        let mut h = Fnv1a::new();
        let mut buf = Vec::new();
        for p in &self.params {
            h.update(p.name.as_bytes());
            for &d in p.value.shape() {
                h.update(&(d as u64).to_le_bytes());
            }
            buf.clear();
            for &x in p.value.data() {
                x.write_le(&mut buf);
            }
            h.update(&buf);
        }
        h.finish()
    }
}

/// Binds parameters of a store onto a tape on first use, so a forward pass
/// only records the parameters it actually reads.
pub struct Binder<'a, T: Float> {
    tape: &'a Tape<T>,
    store: &'a ParamStore<T>,
    track: bool,
    bound: RefCell<Vec<Option<Var<'a, T>>>>,
}

impl<'a, T: Float> Binder<'a, T> {
    /// Trainable parameters become differentiable leaves.
    pub fn new(tape: &'a Tape<T>, store: &'a ParamStore<T>) -> Self {
        Self::with_tracking(tape, store, true)
    }

    /// Every parameter is bound as a constant; nothing is differentiable.
    pub fn inference(tape: &'a Tape<T>, store: &'a ParamStore<T>) -> Self {
        Self::with_tracking(tape, store, false)
    }

    fn with_tracking(tape: &'a Tape<T>, store: &'a ParamStore<T>, track: bool) -> Self {
        Binder {
            tape,
            store,
            track,
            bound: RefCell::new(vec![None; store.len()]),
        }
    }

    pub fn tape(&self) -> &'a Tape<T> {
        self.tape
    }

    pub fn store(&self) -> &'a ParamStore<T> {
        self.store
    }

    pub fn param(&self, id: ParamId) -> Var<'a, T> {
        if let Some(v) = self.bound.borrow()[id.0] {
            return v;
        }
        let p = self.store.get(id);
        let v = if self.track && p.trainable {
            self.tape.leaf(p.value.clone())
        } else {
            self.tape.constant(p.value.clone())
        };
        self.bound.borrow_mut()[id.0] = Some(v);
        v
    }

    /// Gradients indexed by [`ParamId`]; `None` for parameters the loss did not reach.
    pub fn grads(&self, grads: &Gradients<T>) -> Vec<Option<Tensor<T>>> {
        self.bound
            .borrow()
            .iter()
            .map(|b| b.and_then(|v| grads.get(v).cloned()))
            .collect()
    }
}
