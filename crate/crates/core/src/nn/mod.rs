//! Transformer building blocks on top of the autodiff tape.

mod attention;
mod block;
mod check;
mod conv;
mod linear;
mod optim;
mod param;
mod patch;

pub use attention::{Attended, AttentionBias, Mhsa};
pub use check::grad_check_module;
pub use block::{Activation, BlockSpec, EncoderBlock, Ffn, NormPlacement};
pub(crate) use block::keyword_enum;
pub use conv::{check_kernel_size, depthwise_conv2d, separable_conv2d, DepthwiseConv, KernelInit, Padding, SeparableConv};
pub use linear::{LayerNorm, Linear, INIT_STD};
pub use optim::{adamw_step, AdamHyper, AdamState};
pub use param::{Binder, Param, ParamId, ParamStore};
pub use patch::PatchEmbed;
