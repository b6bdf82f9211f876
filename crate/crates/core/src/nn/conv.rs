//! Depthwise and depthwise-separable 2-D convolutions.
//!
//! Convolution here is cross-correlation (no kernel flip). Zero and
//! circular padding use `(k-1)/2` cells per side and preserve the spatial
//! extent; `None` evaluates only the positions where the whole window fits.

use rand::Rng;

use super::block::keyword_enum;
use super::linear::INIT_STD;
use super::param::{Binder, ParamId, ParamStore};
use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::rng::{trunc_normal_tensor, uniform_tensor};
use crate::tensor::{Float, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Padding {
    Zero,
    /// Toroidal wrap-around. Not a standard PEG mode; it makes translation
    /// equivariance exact and isolates what zero padding contributes.
    Circular,
    None,
}

keyword_enum!(Padding, "padding", Padding::Zero => "zero", Padding::Circular => "circular", Padding::None => "none");

/// How fresh convolution kernels are drawn.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum KernelInit {
    /// Truncated normal, std 0.02.
    TruncNormal,
    /// Uniform on ±1/√(k²), the usual default for a depthwise conv layer.
    ConvUniform,
    Zeros,
}

keyword_enum!(KernelInit, "peg_init", KernelInit::TruncNormal => "trunc_normal", KernelInit::ConvUniform => "conv_uniform", KernelInit::Zeros => "zeros");

impl KernelInit {
    pub fn draw<T: Float>(self, rng: &mut impl Rng, channels: usize, k: usize) -> Tensor<T> {
        let shape = vec![channels, k, k];
        match self {
            KernelInit::TruncNormal => trunc_normal_tensor(rng, shape, INIT_STD),
            KernelInit::ConvUniform => {
                let bound = 1.0 / (k as f64);
                uniform_tensor(rng, shape, -bound, bound)
            }
            KernelInit::Zeros => Tensor::zeros(shape),
        }
    }
}

pub fn check_kernel_size(k: usize) -> Result<()> {
    if k == 0 || k % 2 == 0 {
        return Err(Error::config("kernel", format!("kernel size must be odd and >= 1, got {k}")));
    }
    Ok(())
}

/// One `k×k` filter per channel, no bias.
#[derive(Clone, Debug)]
pub struct DepthwiseConv {
    pub kernel: ParamId,
    pub channels: usize,
    pub k: usize,
    pub padding: Padding,
}

impl DepthwiseConv {
    pub fn new<T: Float>(
        store: &mut ParamStore<T>,
        name: &str,
        channels: usize,
        k: usize,
        padding: Padding,
        init: KernelInit,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        check_kernel_size(k)?;
        let kernel = store.add(format!("{name}.kernel"), init.draw(rng, channels, k), true);
        Ok(DepthwiseConv {
            kernel,
            channels,
            k,
            padding,
        })
    }

    /// Channels-last input `[B, H, W, C]`.
    pub fn forward_nhwc<'a, T: Float>(&self, b: &Binder<'a, T>, x: Var<'a, T>) -> Result<Var<'a, T>> {
        x.depthwise_conv(b.param(self.kernel), self.padding)
    }

    /// Channels-first input `[B, C, H, W]`.
    pub fn forward<'a, T: Float>(&self, b: &Binder<'a, T>, x: Var<'a, T>) -> Result<Var<'a, T>> {
        depthwise_conv2d(x, b.param(self.kernel), self.padding)
    }

    pub fn num_params(&self) -> usize {
        self.channels * self.k * self.k
    }
}

/// Depthwise conv followed by a bias-free 1×1 pointwise mixing `[C, C]`.
#[derive(Clone, Debug)]
pub struct SeparableConv {
    pub depthwise: DepthwiseConv,
    pub pointwise: ParamId,
}

impl SeparableConv {
    pub fn new<T: Float>(
        store: &mut ParamStore<T>,
        name: &str,
        channels: usize,
        k: usize,
        padding: Padding,
        init: KernelInit,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let depthwise = DepthwiseConv::new(store, &format!("{name}.dw"), channels, k, padding, init, rng)?;
        let pw = match init {
            KernelInit::Zeros => Tensor::zeros(vec![channels, channels]),
            _ => trunc_normal_tensor(rng, vec![channels, channels], INIT_STD),
        };
        let pointwise = store.add(format!("{name}.pw"), pw, true);
        Ok(SeparableConv { depthwise, pointwise })
    }

    pub fn forward_nhwc<'a, T: Float>(&self, b: &Binder<'a, T>, x: Var<'a, T>) -> Result<Var<'a, T>> {
        self.depthwise.forward_nhwc(b, x)?.matmul(b.param(self.pointwise))
    }

    pub fn forward<'a, T: Float>(&self, b: &Binder<'a, T>, x: Var<'a, T>) -> Result<Var<'a, T>> {
        separable_conv2d(x, b.param(self.depthwise.kernel), b.param(self.pointwise), self.depthwise.padding)
    }

    /// `d² + k²·d`.
    pub fn num_params(&self) -> usize {
        self.depthwise.num_params() + self.depthwise.channels * self.depthwise.channels
    }
}

/// Depthwise convolution of `[B, C, H, W]` by a `[C, k, k]` kernel.
pub fn depthwise_conv2d<'a, T: Float>(x: Var<'a, T>, kernel: Var<'a, T>, padding: Padding) -> Result<Var<'a, T>> {
    let s = x.shape();
    if s.len() != 4 {
        return Err(Error::dim("depthwise_conv2d", &s, &kernel.shape()));
    }
    x.permute(&[0, 2, 3, 1])?
        .depthwise_conv(kernel, padding)?
        .permute(&[0, 3, 1, 2])
}

/// Depthwise `[C, k, k]` then pointwise `[C, C_out]` on `[B, C, H, W]`.
pub fn separable_conv2d<'a, T: Float>(
    x: Var<'a, T>,
    kernel: Var<'a, T>,
    pointwise: Var<'a, T>,
    padding: Padding,
) -> Result<Var<'a, T>> {
    let s = x.shape();
    if s.len() != 4 {
        return Err(Error::dim("separable_conv2d", &s, &kernel.shape()));
    }
    x.permute(&[0, 2, 3, 1])?
        .depthwise_conv(kernel, padding)?
        .matmul(pointwise)?
        .permute(&[0, 3, 1, 2])
}
