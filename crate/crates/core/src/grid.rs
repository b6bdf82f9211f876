//! Token grids: sequences of patch tokens that remember their 2-D layout.
//!
//! Tokens are flattened row-major (row index varies slowest). When a class
//! token is present it sits at sequence index 0 and is not part of the grid.

use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::tensor::{Float, Tensor};

/// A batch of token sequences `[B, N, C]` with grid dimensions.
#[derive(Clone, Copy, Debug)]
pub struct TokenGrid<'a, T: Float> {
    pub tokens: Var<'a, T>,
    pub grid_h: usize,
    pub grid_w: usize,
    pub has_cls: bool,
    /// Set once an absolute (input-phase) encoding has been added.
    pub abs_pe_applied: bool,
}

impl<'a, T: Float> TokenGrid<'a, T> {
    pub fn new(tokens: Var<'a, T>, grid_h: usize, grid_w: usize, has_cls: bool) -> Result<Self> {
        let g = TokenGrid {
            tokens,
            grid_h,
            grid_w,
            has_cls,
            abs_pe_applied: false,
        };
        g.validate()?;
        Ok(g)
    }

    /// Checks that the sequence length matches the grid (plus class token).
    pub fn validate(&self) -> Result<()> {
        let s = self.tokens.shape();
        if s.len() != 3 {
            return Err(Error::contract(format!("token tensor must be [B, N, C], got {s:?}")));
        }
        let expected = self.grid_h * self.grid_w + usize::from(self.has_cls);
        if s[1] != expected {
            return Err(Error::contract(format!(
                "sequence of {} tokens does not match a {}x{} grid{}",
                s[1],
                self.grid_h,
                self.grid_w,
                if self.has_cls { " plus class token" } else { "" }
            )));
        }
        Ok(())
    }

    pub fn batch(&self) -> usize {
        self.tokens.shape()[0]
    }

    pub fn seq_len(&self) -> usize {
        self.tokens.shape()[1]
    }

    pub fn dim(&self) -> usize {
        self.tokens.shape()[2]
    }

    pub fn with_tokens(self, tokens: Var<'a, T>) -> Self {
        TokenGrid { tokens, ..self }
    }
}

fn grid_offset(has_cls: bool) -> usize {
    usize::from(has_cls)
}

/// Cyclically shifts the grid tokens of a `[B, N, C]` tensor by `(dy, dx)`
/// cells; a class token (if any) stays in place.
pub fn roll_tokens<T: Float>(t: &Tensor<T>, grid: (usize, usize), shift: (isize, isize), has_cls: bool) -> Tensor<T> {
    let s = t.shape();
    let (b, n, c) = (s[0], s[1], s[2]);
    let (h, w) = grid;
    let off = grid_offset(has_cls);
    let mut out = t.clone();
    for bi in 0..b {
        for y in 0..h {
            for x in 0..w {
                let ny = (y as isize + shift.0).rem_euclid(h as isize) as usize;
                let nx = (x as isize + shift.1).rem_euclid(w as isize) as usize;
                let src = (bi * n + off + y * w + x) * c;
                let dst = (bi * n + off + ny * w + nx) * c;
                out.data_mut()[dst..dst + c].copy_from_slice(&t.data()[src..src + c]);
            }
        }
    }
    out
}

/// Reorders tokens: output token `i` is input token `perm[i]`.
pub fn permute_tokens<T: Float>(t: &Tensor<T>, perm: &[usize]) -> Tensor<T> {
    let s = t.shape();
    let (b, n, c) = (s[0], s[1], s[2]);
    assert_eq!(perm.len(), n, "permutation length must equal sequence length");
    let mut out = t.clone();
    for bi in 0..b {
        for (i, &p) in perm.iter().enumerate() {
            let src = (bi * n + p) * c;
            let dst = (bi * n + i) * c;
            out.data_mut()[dst..dst + c].copy_from_slice(&t.data()[src..src + c]);
        }
    }
    out
}

/// Cyclic shift of `[B, C, H, W]` images by `(dy, dx)` pixels.
pub fn roll_images<T: Float>(img: &Tensor<T>, shift: (isize, isize)) -> Tensor<T> {
    let s = img.shape();
    let (h, w) = (s[2], s[3]);
    let planes = s[0] * s[1];
    let mut out = img.clone();
    for p in 0..planes {
        for y in 0..h {
            for x in 0..w {
                let ny = (y as isize + shift.0).rem_euclid(h as isize) as usize;
                let nx = (x as isize + shift.1).rem_euclid(w as isize) as usize;
                out.data_mut()[(p * h + ny) * w + nx] = img.data()[(p * h + y) * w + x];
            }
        }
    }
    out
}
