use rand::Rng;

use super::linear::Linear;
use super::param::{Binder, ParamStore};
use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::tensor::Float;

/// Position-dependent terms injected into self-attention.
pub trait AttentionBias<T: Float> {
    /// Added to `Q·Kᵀ` (before the `1/√d_k` scaling). `q` is `[B, h, N, d_k]`,
    /// the result `[B, h, N, N]`.
    fn score_bias<'a>(&self, b: &Binder<'a, T>, q: Var<'a, T>) -> Result<Var<'a, T>>;

    /// Added to the attention-weighted values, `[B, h, N, d_k]`, if present.
    fn value_bias<'a>(&self, b: &Binder<'a, T>, attn: Var<'a, T>) -> Result<Option<Var<'a, T>>>;
}

/// Multi-head self-attention parameters: per-head dimension `d_k = d / h`.
#[derive(Clone, Debug)]
pub struct Mhsa {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub out: Linear,
    pub dim: usize,
    pub heads: usize,
}

/// Output of one attention layer with its normalized `[B, h, N, N]` scores.
#[derive(Clone, Copy, Debug)]
pub struct Attended<'a, T: Float> {
    pub output: Var<'a, T>,
    pub scores: Var<'a, T>,
}

impl Mhsa {
    pub fn new<T: Float>(
        store: &mut ParamStore<T>,
        name: &str,
        dim: usize,
        heads: usize,
        qkv_bias: bool,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if heads == 0 || dim % heads != 0 {
            return Err(Error::config("heads", format!("dim {dim} is not divisible by {heads} heads")));
        }
        Ok(Mhsa {
            query: Linear::new(store, &format!("{name}.q"), dim, dim, qkv_bias, rng),
            key: Linear::new(store, &format!("{name}.k"), dim, dim, qkv_bias, rng),
            value: Linear::new(store, &format!("{name}.v"), dim, dim, qkv_bias, rng),
            out: Linear::new(store, &format!("{name}.o"), dim, dim, true, rng),
            dim,
            heads,
        })
    }

    pub fn head_dim(&self) -> usize {
        self.dim / self.heads
    }

    /// `softmax(Q·Kᵀ/√d_k)·V` per head, heads concatenated and projected.
    pub fn forward<'a, T: Float>(
        &self,
        b: &Binder<'a, T>,
        x: Var<'a, T>,
        bias: Option<&dyn AttentionBias<T>>,
    ) -> Result<Attended<'a, T>> {
        let s = x.shape();
        if s.len() != 3 || s[2] != self.dim {
            return Err(Error::dim("mhsa", &s, &[self.dim]));
        }
        let (batch, n) = (s[0], s[1]);
        if n == 0 {
            return Err(Error::contract("self-attention over an empty sequence"));
        }
        let (h, dk) = (self.heads, self.head_dim());
        let split = |t: Var<'a, T>| t.reshape(&[batch, n, h, dk])?.permute(&[0, 2, 1, 3]);
        let q = split(self.query.forward(b, x)?)?;
        let k = split(self.key.forward(b, x)?)?;
        let v = split(self.value.forward(b, x)?)?;
        let mut logits = q.matmul(k.transpose()?)?;
        if let Some(bias) = bias {
            logits = logits.add(bias.score_bias(b, q)?)?;
        }
        let scores = logits.scale(1.0 / (dk as f64).sqrt()).softmax(3)?;
        let mut ctx = scores.matmul(v)?;
        if let Some(bias) = bias {
            if let Some(vb) = bias.value_bias(b, scores)? {
                ctx = ctx.add(vb)?;
            }
        }
        let merged = ctx.permute(&[0, 2, 1, 3])?.reshape(&[batch, n, self.dim])?;
        Ok(Attended {
            output: self.out.forward(b, merged)?,
            scores,
        })
    }

    pub fn num_params(&self) -> usize {
        self.query.num_params() + self.key.num_params() + self.value.num_params() + self.out.num_params()
    }
}
