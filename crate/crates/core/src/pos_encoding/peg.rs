//! Positional encoding generator: `x + F(x)` on the token grid, where `F`
//! is a stack of `l` depthwise (or separable) `k×k` convolutions.

use std::collections::BTreeSet;
use std::rc::Rc;

use rand::Rng;

use crate::autodiff::{concat, select, Var};
use crate::error::{Error, Result};
use crate::grid::TokenGrid;
use crate::nn::{check_kernel_size, keyword_enum, Binder, DepthwiseConv, KernelInit, Padding, ParamStore, SeparableConv};
use crate::tensor::{Float, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PegFunction {
    Depthwise,
    Separable,
}

keyword_enum!(PegFunction, "peg_function", PegFunction::Depthwise => "depthwise", PegFunction::Separable => "separable");

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PegSpec {
    pub kernel: usize,
    pub layers: usize,
    pub function: PegFunction,
    pub padding: Padding,
    /// Encoder indices after which a PEG runs; `-1` is before the first block.
    pub positions: BTreeSet<isize>,
    pub init: KernelInit,
}

impl Default for PegSpec {
    fn default() -> Self {
        PegSpec {
            kernel: 3,
            layers: 1,
            function: PegFunction::Depthwise,
            padding: Padding::Zero,
            positions: BTreeSet::from([0]),
            init: KernelInit::TruncNormal,
        }
    }
}

impl PegSpec {
    pub fn validate(&self, depth: usize) -> Result<()> {
        check_kernel_size(self.kernel).map_err(|_| {
            Error::config("peg_kernel", format!("kernel size must be odd and >= 1, got {}", self.kernel))
        })?;
        if self.layers == 0 {
            return Err(Error::config("peg_layers", "at least one convolution layer is required"));
        }
        if self.positions.is_empty() {
            return Err(Error::config("peg_positions", "no insertion position given"));
        }
        if let Some(&bad) = self.positions.iter().find(|&&p| p < -1 || p >= depth as isize) {
            return Err(Error::config(
                "peg_positions",
                format!("position {bad} outside -1..={} for depth {depth}", depth as isize - 1),
            ));
        }
        Ok(())
    }
}

/// Parses `0`, `-1,0,2`, or ranges such as `0-4` / `-1-3`.
pub fn parse_positions(s: &str) -> Result<BTreeSet<isize>> {
    let bad = || Error::config("peg_positions", format!("cannot parse `{s}`"));
    let mut out = BTreeSet::new();
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let split = part.char_indices().skip(1).find(|&(_, c)| c == '-').map(|(i, _)| i);
        match split {
            Some(i) => {
                let lo: isize = part[..i].parse().map_err(|_| bad())?;
                let hi: isize = part[i + 1..].parse().map_err(|_| bad())?;
                if hi < lo {
                    return Err(bad());
                }
                out.extend(lo..=hi);
            }
            None => {
                out.insert(part.parse().map_err(|_| bad())?);
            }
        }
    }
    if out.is_empty() {
        return Err(bad());
    }
    Ok(out)
}

pub fn format_positions(p: &BTreeSet<isize>) -> String {
    p.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
}

#[derive(Clone, Debug)]
pub enum PegLayer {
    Depthwise(DepthwiseConv),
    Separable(SeparableConv),
}

impl PegLayer {
    fn forward<'a, T: Float>(&self, b: &Binder<'a, T>, x: Var<'a, T>) -> Result<Var<'a, T>> {
        match self {
            PegLayer::Depthwise(c) => c.forward_nhwc(b, x),
            PegLayer::Separable(c) => c.forward_nhwc(b, x),
        }
    }

    fn depthwise(&self) -> &DepthwiseConv {
        match self {
            PegLayer::Depthwise(c) => c,
            PegLayer::Separable(c) => &c.depthwise,
        }
    }

    fn num_params(&self) -> usize {
        match self {
            PegLayer::Depthwise(c) => c.num_params(),
            PegLayer::Separable(c) => c.num_params(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Peg {
    pub layers: Vec<PegLayer>,
    pub dim: usize,
    pub kernel: usize,
    pub padding: Padding,
}

impl Peg {
    pub fn new<T: Float>(store: &mut ParamStore<T>, name: &str, dim: usize, spec: &PegSpec, rng: &mut impl Rng) -> Result<Self> {
        let mut layers = Vec::with_capacity(spec.layers);
        for i in 0..spec.layers {
            let lname = format!("{name}.{i}");
            let (k, pad, init) = (spec.kernel, spec.padding, spec.init);
            layers.push(match spec.function {
                PegFunction::Depthwise => PegLayer::Depthwise(DepthwiseConv::new(store, &lname, dim, k, pad, init, rng)?),
                PegFunction::Separable => PegLayer::Separable(SeparableConv::new(store, &lname, dim, k, pad, init, rng)?),
            });
        }
        Ok(Peg {
            layers,
            dim,
            kernel: spec.kernel,
            padding: spec.padding,
        })
    }

    /// Parameter ids of every kernel in this PEG.
    pub fn param_ids(&self) -> Vec<crate::nn::ParamId> {
        let mut ids = Vec::new();
        for l in &self.layers {
            ids.push(l.depthwise().kernel);
            if let PegLayer::Separable(s) = l {
                ids.push(s.pointwise);
            }
        }
        ids
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(PegLayer::num_params).sum()
    }

    /// Multiply-accumulates of `F` on an `hg×wg` grid.
    pub fn flops(&self, hg: usize, wg: usize) -> u64 {
        let (k, d) = (self.kernel, self.dim);
        let (mut h, mut w) = (hg, wg);
        let mut total = 0u64;
        for layer in &self.layers {
            if self.padding == Padding::None {
                h = h.saturating_sub(k - 1);
                w = w.saturating_sub(k - 1);
            }
            total += (h * w * d * k * k) as u64;
            if matches!(layer, PegLayer::Separable(_)) {
                total += (h * w * d * d) as u64;
            }
        }
        total
    }

    /// `F(x)` on a channels-last grid `[B, H, W, C]`, same shape out. Without
    /// padding the valid region is re-embedded with zeros around it.
    pub fn transform<'a, T: Float>(&self, b: &Binder<'a, T>, x: Var<'a, T>) -> Result<Var<'a, T>> {
        let mut y = x;
        for layer in &self.layers {
            y = layer.forward(b, y)?;
        }
        if self.padding == Padding::None {
            let (xs, ys) = (x.shape(), y.shape());
            let margin = (xs[1] - ys[1]) / 2;
            y = pad_axis(y, 1, margin)?;
            y = pad_axis(y, 2, margin)?;
        }
        Ok(y)
    }
}

fn pad_axis<'a, T: Float>(x: Var<'a, T>, axis: usize, margin: usize) -> Result<Var<'a, T>> {
    if margin == 0 {
        return Ok(x);
    }
    let mut shape = x.shape();
    shape[axis] = margin;
    let zeros = x.tape().constant(Tensor::zeros(shape));
    concat(&[zeros, x, zeros], axis)
}

/// Applies `x + F(x)` to the grid tokens; a class token passes through
/// untouched and keeps sequence index 0.
pub fn peg_forward<'a, T: Float>(b: &Binder<'a, T>, grid: TokenGrid<'a, T>, peg: &Peg) -> Result<TokenGrid<'a, T>> {
    grid.validate()?;
    let (batch, n, c) = (grid.batch(), grid.seq_len(), grid.dim());
    if c != peg.dim {
        return Err(Error::dim("peg", &grid.tokens.shape(), &[peg.dim]));
    }
    let (gh, gw) = (grid.grid_h, grid.grid_w);
    let off = usize::from(grid.has_cls);
    let feat = if grid.has_cls { grid.tokens.slice(1, 1, n - 1)? } else { grid.tokens };
    let x = feat.reshape(&[batch, gh, gw, c])?;
    let y = x.add(peg.transform(b, x)?)?.reshape(&[batch, gh * gw, c])?;
    let tokens = if off == 1 { concat(&[grid.tokens.slice(1, 0, 1)?, y], 1)? } else { y };
    Ok(grid.with_tokens(tokens))
}

/// PEG over a padded grid: the convolution runs over every cell, then
/// masked cells are restored to their input values, so no gradient reaches
/// them through the PEG. `mask` has one entry per token (shared across the
/// batch) or one per token per batch element.
pub fn peg_forward_masked<'a, T: Float>(
    b: &Binder<'a, T>,
    grid: TokenGrid<'a, T>,
    peg: &Peg,
    mask: &[bool],
) -> Result<TokenGrid<'a, T>> {
    grid.validate()?;
    let (batch, n) = (grid.batch(), grid.seq_len());
    let full: Vec<bool> = if mask.len() == n {
        mask.iter().copied().cycle().take(batch * n).collect()
    } else if mask.len() == batch * n {
        mask.to_vec()
    } else {
        return Err(Error::contract(format!(
            "mask has {} entries for {batch} sequences of {n} tokens",
            mask.len()
        )));
    };
    let out = peg_forward(b, grid, peg)?;
    let tokens = select(Rc::new(full), grid.tokens, out.tokens)?;
    Ok(out.with_tokens(tokens))
}
