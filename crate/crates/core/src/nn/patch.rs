use rand::Rng;

use super::linear::Linear;
use super::param::{Binder, ParamStore};
use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::grid::TokenGrid;
use crate::tensor::Float;

/// Splits images into non-overlapping `S×S` patches and projects each
/// flattened `(C, S, S)` patch to a `d`-dimensional token.
#[derive(Clone, Debug)]
pub struct PatchEmbed {
    pub proj: Linear,
    pub patch: usize,
    pub in_channels: usize,
    pub dim: usize,
}

impl PatchEmbed {
    pub fn new<T: Float>(
        store: &mut ParamStore<T>,
        name: &str,
        in_channels: usize,
        patch: usize,
        dim: usize,
        rng: &mut impl Rng,
    ) -> Self {
        PatchEmbed {
            proj: Linear::new(store, &format!("{name}.proj"), in_channels * patch * patch, dim, true, rng),
            patch,
            in_channels,
            dim,
        }
    }

    /// Token grid dimensions for an `h×w` image.
    pub fn grid_for(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let s = self.patch;
        if s == 0 || h % s != 0 || w % s != 0 {
            return Err(Error::Input(format!(
                "image size {h}x{w} is not divisible by patch size S={s}"
            )));
        }
        Ok((h / s, w / s))
    }

    /// `[B, C, H, W] -> [B, HW/S², d]`.
    pub fn forward<'a, T: Float>(&self, b: &Binder<'a, T>, images: Var<'a, T>) -> Result<TokenGrid<'a, T>> {
        let sh = images.shape();
        if sh.len() != 4 || sh[1] != self.in_channels {
            return Err(Error::dim("patch_embed", &sh, &[self.in_channels, self.patch, self.patch]));
        }
        let (batch, c, h, w) = (sh[0], sh[1], sh[2], sh[3]);
        let (gh, gw) = self.grid_for(h, w)?;
        let s = self.patch;
        let patches = images
            .reshape(&[batch, c, gh, s, gw, s])?
            .permute(&[0, 2, 4, 1, 3, 5])?
            .reshape(&[batch, gh * gw, c * s * s])?;
        let tokens = self.proj.forward(b, patches)?;
        TokenGrid::new(tokens, gh, gw, false)
    }

    pub fn num_params(&self) -> usize {
        self.proj.num_params()
    }
}
