use super::param::ParamStore;
use crate::error::{Error, Result};
use crate::tensor::{Float, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamHyper {
    pub lr: f64,
    pub weight_decay: f64,
    pub betas: (f64, f64),
    pub eps: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        AdamHyper {
            lr: 5e-4,
            weight_decay: 0.05,
            betas: (0.9, 0.999),
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates, kept in f64 regardless of the
/// parameter precision.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AdamState {
    pub step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new<T: Float>(store: &ParamStore<T>) -> Self {
        let zeros = |_| Vec::new();
        AdamState {
            step: 0,
            m: (0..store.len()).map(zeros).collect(),
            v: (0..store.len()).map(zeros).collect(),
        }
    }

    pub fn first_moment(&self, index: usize) -> &[f64] {
        &self.m[index]
    }

    pub fn second_moment(&self, index: usize) -> &[f64] {
        &self.v[index]
    }
}

/// One AdamW update over every trainable parameter that received a gradient.
///
/// Decay is decoupled: `p ← p·(1 − lr·wd) − lr·m̂/(√v̂ + eps)`, applied only to
/// parameters flagged for decay.
pub fn adamw_step<T: Float>(
    store: &mut ParamStore<T>,
    grads: &[Option<Tensor<T>>],
    state: &mut AdamState,
    hyper: AdamHyper,
) -> Result<()> {
    if !(hyper.lr > 0.0) {
        return Err(Error::config("lr", format!("learning rate must be positive, got {}", hyper.lr)));
    }
    if grads.len() != store.len() || state.m.len() != store.len() {
        return Err(Error::contract(format!(
            "optimizer state for {} parameters, store has {}, gradients {}",
            state.m.len(),
            store.len(),
            grads.len()
        )));
    }
    let (b1, b2) = hyper.betas;
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    let ids: Vec<_> = store.iter().map(|(id, _)| id).collect();
    for id in ids {
        let i = id.index();
        let Some(g) = &grads[i] else { continue };
        let p = store.get_mut(id);
        if !p.trainable {
            continue;
        }
        if g.shape() != p.value.shape() {
            return Err(Error::dim("adamw_step", p.value.shape(), g.shape()));
        }
        let n = p.value.numel();
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        if m.is_empty() {
            m.resize(n, 0.0);
            v.resize(n, 0.0);
        }
        let shrink = if p.decay { 1.0 - hyper.lr * hyper.weight_decay } else { 1.0 };
        for (j, (x, &gj)) in p.value.data_mut().iter_mut().zip(g.data()).enumerate() {
            let gj = gj.as_f64();
            m[j] = b1 * m[j] + (1.0 - b1) * gj;
            v[j] = b2 * v[j] + (1.0 - b2) * gj * gj;
            let update = (m[j] / c1) / ((v[j] / c2).sqrt() + hyper.eps);
            *x = T::of(x.as_f64() * shrink - hyper.lr * update);
        }
    }
    Ok(())
}
