use rand::Rng;

use super::param::{Binder, ParamId, ParamStore};
use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::rng::trunc_normal_tensor;
use crate::tensor::{Float, Tensor};

/// Standard deviation of the truncated-normal projection init.
pub const INIT_STD: f64 = 0.02;

/// Affine map `x·W + b` over the last axis, `W: [d_in, d_out]`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub d_in: usize,
    pub d_out: usize,
}

impl Linear {
    pub fn new<T: Float>(
        store: &mut ParamStore<T>,
        name: &str,
        d_in: usize,
        d_out: usize,
        bias: bool,
        rng: &mut impl Rng,
    ) -> Self {
        let weight = store.add(
            format!("{name}.weight"),
            trunc_normal_tensor(rng, vec![d_in, d_out], INIT_STD),
            true,
        );
        let bias = bias.then(|| store.add(format!("{name}.bias"), Tensor::zeros(vec![d_out]), false));
        Linear {
            weight,
            bias,
            d_in,
            d_out,
        }
    }

    pub fn forward<'a, T: Float>(&self, b: &Binder<'a, T>, x: Var<'a, T>) -> Result<Var<'a, T>> {
        let s = x.shape();
        if s.last() != Some(&self.d_in) {
            return Err(Error::dim("linear", &s, &[self.d_in, self.d_out]));
        }
        let y = x.matmul(b.param(self.weight))?;
        match self.bias {
            Some(bias) => y.add_broadcast(b.param(bias)),
            None => Ok(y),
        }
    }

    pub fn num_params(&self) -> usize {
        self.d_in * self.d_out + if self.bias.is_some() { self.d_out } else { 0 }
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub dim: usize,
    pub eps: f64,
}

impl LayerNorm {
    pub const DEFAULT_EPS: f64 = 1e-6;

    pub fn new<T: Float>(store: &mut ParamStore<T>, name: &str, dim: usize) -> Self {
        LayerNorm {
            gamma: store.add(format!("{name}.gamma"), Tensor::ones(vec![dim]), false),
            beta: store.add(format!("{name}.beta"), Tensor::zeros(vec![dim]), false),
            dim,
            eps: Self::DEFAULT_EPS,
        }
    }

    pub fn forward<'a, T: Float>(&self, b: &Binder<'a, T>, x: Var<'a, T>) -> Result<Var<'a, T>> {
        x.layer_norm(b.param(self.gamma), b.param(self.beta), self.eps)
    }
}
