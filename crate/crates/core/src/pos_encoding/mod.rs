//! Positional information schemes behind one interface: none, learnable
//! absolute tables, 1-D and 2-D sinusoids, relative attention bias, and the
//! convolutional positional encoding generator (PEG).

mod peg;
mod relative;
mod resize;
mod sinusoid;

use std::collections::BTreeMap;
use std::fmt;

use rand::Rng;

pub use peg::{format_positions, parse_positions, peg_forward, peg_forward_masked, Peg, PegFunction, PegLayer, PegSpec};
pub use relative::{zero_tables, GridRelativeBias, RelativeBias, DEFAULT_CLIP};
pub use resize::{bicubic_resize, cubic_weights, mean_row_norm, resize_learnable_pe};
pub use sinusoid::{sincos_2d, sinusoidal_pe};

use crate::autodiff::concat;
use crate::error::{Error, Result};
use crate::grid::TokenGrid;
use crate::nn::{Binder, ParamId, ParamStore, INIT_STD};
use crate::rng::trunc_normal_tensor;
use crate::tensor::{Float, Tensor};

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum EncodingScheme {
    None,
    Learnable,
    Sinusoidal1d,
    SinCos2d,
    Relative { clip: usize, value_bias: bool },
    Peg(PegSpec),
}

impl EncodingScheme {
    pub fn name(&self) -> &'static str {
        match self {
            EncodingScheme::None => "none",
            EncodingScheme::Learnable => "learnable",
            EncodingScheme::Sinusoidal1d => "sinusoidal1d",
            EncodingScheme::SinCos2d => "sincos2d",
            EncodingScheme::Relative { .. } => "relative",
            EncodingScheme::Peg(_) => "peg",
        }
    }

    pub fn peg_spec(&self) -> Option<&PegSpec> {
        match self {
            EncodingScheme::Peg(s) => Some(s),
            _ => None,
        }
    }

    /// Whether the scheme can run on a grid other than the one it was built for
    /// without any resampling.
    pub fn generalizes(&self) -> bool {
        !matches!(self, EncodingScheme::Learnable)
    }
}

impl fmt::Display for EncodingScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Where in the encoder stack an encoding step is requested.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    /// Patch embeddings, before the first encoder block.
    Input,
    /// Output of encoder block `i`.
    AfterBlock(usize),
}

impl Phase {
    /// PEG position index: `-1` for the input, `i` after block `i`.
    pub fn position(self) -> isize {
        match self {
            Phase::Input => -1,
            Phase::AfterBlock(i) => i as isize,
        }
    }
}

#[derive(Clone, Debug)]
pub struct LearnablePe {
    /// `[Hg, Wg, d]`
    pub grid: ParamId,
    /// `[1, d]`, present when the model has a class token.
    pub cls: Option<ParamId>,
}

/// Instantiated parameters and bookkeeping of an [`EncodingScheme`].
#[derive(Clone, Debug)]
pub struct PositionalEncoder {
    pub scheme: EncodingScheme,
    pub dim: usize,
    pub build_grid: (usize, usize),
    pub learnable: Option<LearnablePe>,
    pub relative: Option<RelativeBias>,
    pub pegs: BTreeMap<isize, Peg>,
}

impl PositionalEncoder {
    pub fn new<T: Float>(
        store: &mut ParamStore<T>,
        scheme: &EncodingScheme,
        dim: usize,
        heads: usize,
        build_grid: (usize, usize),
        has_cls: bool,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let mut enc = PositionalEncoder {
            scheme: scheme.clone(),
            dim,
            build_grid,
            learnable: None,
            relative: None,
            pegs: BTreeMap::new(),
        };
        match scheme {
            EncodingScheme::None => {}
            EncodingScheme::Learnable => {
                let (h, w) = build_grid;
                let grid = store.add("pos.table", trunc_normal_tensor(rng, vec![h, w, dim], INIT_STD), false);
                let cls = has_cls.then(|| store.add("pos.cls", trunc_normal_tensor(rng, vec![1, dim], INIT_STD), false));
                enc.learnable = Some(LearnablePe { grid, cls });
            }
            EncodingScheme::Sinusoidal1d => {
                if dim % 2 != 0 {
                    return Err(Error::config("dim", format!("sinusoidal encoding needs an even width, got {dim}")));
                }
            }
            EncodingScheme::SinCos2d => {
                if dim % 4 != 0 {
                    return Err(Error::config("dim", format!("2-D sin-cos encoding needs a width divisible by 4, got {dim}")));
                }
            }
            &EncodingScheme::Relative { clip, value_bias } => {
                if clip == 0 {
                    return Err(Error::config("rpe_clip", "clip distance must be at least 1"));
                }
                enc.relative = Some(RelativeBias::new(store, "pos.rel", clip, dim / heads, value_bias, rng));
            }
            EncodingScheme::Peg(spec) => {
                for &p in &spec.positions {
                    enc.pegs.insert(p, Peg::new(store, &format!("peg.{p}"), dim, spec, rng)?);
                }
            }
        }
        Ok(enc)
    }

    /// Relative bias bound to the layout of `grid`, if this scheme uses one.
    pub fn attention_bias<T: Float>(&self, grid: &TokenGrid<'_, T>) -> Result<Option<GridRelativeBias<'_>>> {
        self.relative
            .as_ref()
            .map(|r| r.for_grid(grid.grid_h, grid.grid_w, grid.has_cls))
            .transpose()
    }

    /// The learnable table for an `h×w` grid as `[h·w, d]`, resampled when
    /// the grid differs from the build grid and `resize` is set.
    pub fn learnable_table<T: Float>(&self, store: &ParamStore<T>, h: usize, w: usize, resize: bool) -> Result<Option<Tensor<T>>> {
        let Some(l) = &self.learnable else { return Ok(None) };
        let table = store.value(l.grid);
        let (bh, bw) = self.build_grid;
        let t = if (h, w) == (bh, bw) {
            table.clone()
        } else if resize {
            resize_learnable_pe(table, h, w)?
        } else {
            return Err(Error::Resolution {
                built_h: bh,
                built_w: bw,
                got_h: h,
                got_w: w,
            });
        };
        Ok(Some(t.into_reshape(vec![h * w, self.dim])?))
    }

    /// Number of scalars in PEG kernels.
    pub fn peg_params(&self) -> usize {
        self.pegs.values().map(Peg::num_params).sum()
    }

    /// PEG multiply-accumulates for one image on an `hg×wg` grid.
    pub fn peg_flops(&self, hg: usize, wg: usize) -> u64 {
        self.pegs.values().map(|p| p.flops(hg, wg)).sum()
    }

    fn apply_absolute<'a, T: Float>(&self, b: &Binder<'a, T>, grid: TokenGrid<'a, T>, resize: bool) -> Result<TokenGrid<'a, T>> {
        if grid.abs_pe_applied {
            return Err(Error::contract("absolute position encoding was already added to these tokens"));
        }
        let (h, w, d) = (grid.grid_h, grid.grid_w, grid.dim());
        let tape = b.tape();
        let table = match &self.scheme {
            EncodingScheme::Learnable => {
                let l = self.learnable.as_ref().expect("learnable scheme has a table");
                let (bh, bw) = self.build_grid;
                if (h, w) == (bh, bw) {
                    b.param(l.grid).reshape(&[h * w, d])?
                } else {
                    tape.constant(self.learnable_table(b.store(), h, w, resize)?.expect("table present"))
                }
            }
            EncodingScheme::Sinusoidal1d => tape.constant(sinusoidal_pe(h * w, d)?),
            EncodingScheme::SinCos2d => tape.constant(sincos_2d(h, w, d)?),
            _ => unreachable!("not an absolute scheme"),
        };
        let table = if grid.has_cls {
            let cls = match self.learnable.as_ref().and_then(|l| l.cls) {
                Some(id) => b.param(id),
                None => tape.constant(Tensor::zeros(vec![1, d])),
            };
            concat(&[cls, table], 0)?
        } else {
            table
        };
        let mut out = grid.with_tokens(grid.tokens.add_broadcast(table)?);
        out.abs_pe_applied = true;
        Ok(out)
    }
}

/// Applies the encoding step for `phase`. Absolute schemes add their table
/// at the input (once); PEG runs at its configured positions; relative bias
/// acts inside attention and leaves tokens unchanged here. A learnable table
/// meets a different grid only when `resize` is set.
pub fn apply_scheme<'a, T: Float>(
    b: &Binder<'a, T>,
    grid: TokenGrid<'a, T>,
    enc: &PositionalEncoder,
    phase: Phase,
    resize: bool,
) -> Result<TokenGrid<'a, T>> {
    match &enc.scheme {
        EncodingScheme::None | EncodingScheme::Relative { .. } => Ok(grid),
        EncodingScheme::Learnable | EncodingScheme::Sinusoidal1d | EncodingScheme::SinCos2d => match phase {
            Phase::Input => enc.apply_absolute(b, grid, resize),
            Phase::AfterBlock(_) => Ok(grid),
        },
        EncodingScheme::Peg(_) => match enc.pegs.get(&phase.position()) {
            Some(peg) => peg_forward(b, grid, peg),
            None => Ok(grid),
        },
    }
}
