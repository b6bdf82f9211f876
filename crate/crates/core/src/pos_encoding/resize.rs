//! Bicubic resampling of learnable position tables over their grid axes.
//!
//! Sampling follows the common `align_corners = false` convention with the
//! Keys cubic kernel (`a = -0.75`) and edge-clamped taps.

use crate::error::{Error, Result};
use crate::tensor::{Float, Tensor};

const CUBIC_A: f64 = -0.75;

fn cubic_near(x: f64) -> f64 {
    ((CUBIC_A + 2.0) * x - (CUBIC_A + 3.0)) * x * x + 1.0
}

fn cubic_far(x: f64) -> f64 {
    ((CUBIC_A * x - 5.0 * CUBIC_A) * x + 8.0 * CUBIC_A) * x - 4.0 * CUBIC_A
}

/// Weights of the four taps at offsets `-1, 0, 1, 2` for fractional position `t`.
pub fn cubic_weights(t: f64) -> [f64; 4] {
    [cubic_far(t + 1.0), cubic_near(t), cubic_near(1.0 - t), cubic_far(2.0 - t)]
}

/// Per output coordinate, the four clamped source indices and their weights.
fn axis_taps(in_len: usize, out_len: usize) -> Vec<([usize; 4], [f64; 4])> {
    let scale = in_len as f64 / out_len as f64;
    (0..out_len)
        .map(|o| {
            let src = (o as f64 + 0.5) * scale - 0.5;
            let base = src.floor();
            let w = cubic_weights(src - base);
            let idx = [-1isize, 0, 1, 2].map(|d| (base as isize + d).clamp(0, in_len as isize - 1) as usize);
            (idx, w)
        })
        .collect()
}

/// Bicubic resize of a `[h, w, d]` field to `[new_h, new_w, d]`, channelwise.
pub fn bicubic_resize<T: Float>(field: &Tensor<T>, new_h: usize, new_w: usize) -> Result<Tensor<T>> {
    let s = field.shape();
    if s.len() != 3 {
        return Err(Error::contract(format!("expected a [h, w, d] table, got {s:?}")));
    }
    if new_h == 0 || new_w == 0 {
        return Err(Error::config("resolution", format!("cannot resize to {new_h}x{new_w}")));
    }
    let (h, w, d) = (s[0], s[1], s[2]);
    if h < 2 || w < 2 {
        return Err(Error::config("resolution", format!("bicubic resize needs a source grid of at least 2x2, got {h}x{w}")));
    }
    let rows = axis_taps(h, new_h);
    let cols = axis_taps(w, new_w);
    let src = field.data();
    let mut out = vec![0f64; new_h * new_w * d];
    for (oy, (ry, wy)) in rows.iter().enumerate() {
        for (ox, (rx, wx)) in cols.iter().enumerate() {
            let acc = &mut out[(oy * new_w + ox) * d..][..d];
            for i in 0..4 {
                for j in 0..4 {
                    let wt = wy[i] * wx[j];
                    let cell = &src[(ry[i] * w + rx[j]) * d..][..d];
                    for (a, &v) in acc.iter_mut().zip(cell) {
                        *a += wt * v.as_f64();
                    }
                }
            }
        }
    }
    Tensor::new(vec![new_h, new_w, d], out.into_iter().map(T::of).collect())
}

/// Mean L2 norm of the `d`-vectors of a `[.., d]` table.
pub fn mean_row_norm<T: Float>(t: &Tensor<T>) -> f64 {
    let d = *t.shape().last().unwrap_or(&1);
    let rows = t.numel() / d.max(1);
    if rows == 0 {
        return 0.0;
    }
    let total: f64 = t
        .data()
        .chunks(d)
        .map(|r| r.iter().map(|v| v.as_f64().powi(2)).sum::<f64>().sqrt())
        .sum();
    total / rows as f64
}

/// Bicubic resize of a learnable grid table, rescaled so that the mean
/// per-token L2 norm matches the source table.
pub fn resize_learnable_pe<T: Float>(pe: &Tensor<T>, new_h: usize, new_w: usize) -> Result<Tensor<T>> {
    let s = pe.shape();
    if s.len() == 3 && s[0] == new_h && s[1] == new_w {
        return Ok(pe.clone());
    }
    let resized = bicubic_resize(pe, new_h, new_w)?;
    let (before, after) = (mean_row_norm(pe), mean_row_norm(&resized));
    if after == 0.0 {
        return Ok(resized);
    }
    let ratio = before / after;
    Ok(resized.map(|v| T::of(v.as_f64() * ratio)))
}
