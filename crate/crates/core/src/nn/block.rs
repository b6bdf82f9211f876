use rand::Rng;

use super::attention::{AttentionBias, Attended, Mhsa};
use super::linear::{LayerNorm, Linear};
use super::param::{Binder, ParamStore};
use crate::autodiff::Var;
use crate::error::Result;
use crate::tensor::Float;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Gelu,
}

/// Where layer normalization sits relative to each residual sublayer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NormPlacement {
    /// `x + f(LN(x))`
    Pre,
    /// `LN(x + f(x))`
    Post,
}

macro_rules! keyword_enum {
    ($ty:ty, $field:literal, $($variant:path => $word:literal),+) => {
        impl ::std::fmt::Display for $ty {
            fn fmt(&self, f: &mut ::std::fmt::Formatter<'_>) -> ::std::fmt::Result {
                f.write_str(match self { $($variant => $word),+ })
            }
        }

        impl ::std::str::FromStr for $ty {
            type Err = $crate::error::Error;

            fn from_str(s: &str) -> $crate::error::Result<Self> {
                match s {
                    $($word => Ok($variant),)+
                    other => Err($crate::error::Error::config($field, format!("unknown value `{other}`"))),
                }
            }
        }
    };
}

keyword_enum!(Activation, "activation", Activation::Relu => "relu", Activation::Gelu => "gelu");
keyword_enum!(NormPlacement, "norm", NormPlacement::Pre => "pre", NormPlacement::Post => "post");

pub(crate) use keyword_enum;

/// Two-layer position-wise feed-forward network.
#[derive(Clone, Debug)]
pub struct Ffn {
    pub fc1: Linear,
    pub fc2: Linear,
    pub activation: Activation,
}

impl Ffn {
    pub fn new<T: Float>(
        store: &mut ParamStore<T>,
        name: &str,
        dim: usize,
        hidden: usize,
        activation: Activation,
        rng: &mut impl Rng,
    ) -> Self {
        Ffn {
            fc1: Linear::new(store, &format!("{name}.fc1"), dim, hidden, true, rng),
            fc2: Linear::new(store, &format!("{name}.fc2"), hidden, dim, true, rng),
            activation,
        }
    }

    pub fn forward<'a, T: Float>(&self, b: &Binder<'a, T>, x: Var<'a, T>) -> Result<Var<'a, T>> {
        let h = self.fc1.forward(b, x)?;
        let h = match self.activation {
            Activation::Relu => h.relu(),
            Activation::Gelu => h.gelu(),
        };
        self.fc2.forward(b, h)
    }

    pub fn num_params(&self) -> usize {
        self.fc1.num_params() + self.fc2.num_params()
    }
}

/// One transformer encoder layer: attention and FFN sublayers with residuals.
#[derive(Clone, Debug)]
pub struct EncoderBlock {
    pub norm1: LayerNorm,
    pub attn: Mhsa,
    pub norm2: LayerNorm,
    pub ffn: Ffn,
    pub placement: NormPlacement,
}

#[derive(Clone, Copy, Debug)]
pub struct BlockSpec {
    pub dim: usize,
    pub heads: usize,
    pub hidden: usize,
    pub activation: Activation,
    pub placement: NormPlacement,
    pub qkv_bias: bool,
}

impl EncoderBlock {
    pub fn new<T: Float>(store: &mut ParamStore<T>, name: &str, spec: BlockSpec, rng: &mut impl Rng) -> Result<Self> {
        Ok(EncoderBlock {
            norm1: LayerNorm::new(store, &format!("{name}.norm1"), spec.dim),
            attn: Mhsa::new(store, &format!("{name}.attn"), spec.dim, spec.heads, spec.qkv_bias, rng)?,
            norm2: LayerNorm::new(store, &format!("{name}.norm2"), spec.dim),
            ffn: Ffn::new(store, &format!("{name}.ffn"), spec.dim, spec.hidden, spec.activation, rng),
            placement: spec.placement,
        })
    }

    pub fn forward<'a, T: Float>(
        &self,
        b: &Binder<'a, T>,
        x: Var<'a, T>,
        bias: Option<&dyn AttentionBias<T>>,
    ) -> Result<Attended<'a, T>> {
        match self.placement {
            NormPlacement::Pre => {
                let att = self.attn.forward(b, self.norm1.forward(b, x)?, bias)?;
                let h = x.add(att.output)?;
                let out = h.add(self.ffn.forward(b, self.norm2.forward(b, h)?)?)?;
                Ok(Attended {
                    output: out,
                    scores: att.scores,
                })
            }
            NormPlacement::Post => {
                let att = self.attn.forward(b, x, bias)?;
                let h = self.norm1.forward(b, x.add(att.output)?)?;
                let out = self.norm2.forward(b, h.add(self.ffn.forward(b, h)?)?)?;
                Ok(Attended {
                    output: out,
                    scores: att.scores,
                })
            }
        }
    }

    pub fn num_params(&self) -> usize {
        4 * self.attn.dim + self.attn.num_params() + self.ffn.num_params()
    }
}
