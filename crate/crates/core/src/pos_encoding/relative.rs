//! Clipped 2-D relative position bias on attention.
//!
//! For grid tokens `i` and `j` at `(rᵢ, cᵢ)` and `(rⱼ, cⱼ)` the key bias is
//! `a_ij = R[clip(rⱼ − rᵢ)] + C[clip(cⱼ − cᵢ)]`, with each offset clipped to
//! `[-K, K]` independently. Logits gain `qᵢ · a_ij`; with value bias on, the
//! context gains `Σⱼ αᵢⱼ aᵛ_ij`. Pairs involving the class token get no bias.
//! Tables are shared by all heads.

use std::rc::Rc;

use rand::Rng;

use crate::autodiff::{IndexMap, Var};
use crate::error::{Error, Result};
use crate::nn::{AttentionBias, Binder, ParamId, ParamStore, INIT_STD};
use crate::rng::trunc_normal_tensor;
use crate::tensor::{Float, Tensor};

/// Default clip distance.
pub const DEFAULT_CLIP: usize = 8;

#[derive(Clone, Debug)]
pub struct RelativeBias {
    pub clip: usize,
    pub head_dim: usize,
    pub key_row: ParamId,
    pub key_col: ParamId,
    pub value_tables: Option<(ParamId, ParamId)>,
}

impl RelativeBias {
    pub fn new<T: Float>(
        store: &mut ParamStore<T>,
        name: &str,
        clip: usize,
        head_dim: usize,
        value_bias: bool,
        rng: &mut impl Rng,
    ) -> Self {
        let size = 2 * clip + 1;
        let mut table = |store: &mut ParamStore<T>, suffix: &str| {
            store.add(format!("{name}.{suffix}"), trunc_normal_tensor(rng, vec![size, head_dim], INIT_STD), false)
        };
        let key_row = table(store, "key_row");
        let key_col = table(store, "key_col");
        let value_tables = value_bias.then(|| (table(store, "value_row"), table(store, "value_col")));
        RelativeBias {
            clip,
            head_dim,
            key_row,
            key_col,
            value_tables,
        }
    }

    pub fn table_len(&self) -> usize {
        2 * self.clip + 1
    }

    /// Table index for a signed offset, clipped to `[-K, K]`.
    pub fn offset_index(&self, offset: isize) -> usize {
        let k = self.clip as isize;
        (offset.clamp(-k, k) + k) as usize
    }

    /// Row-offset and column-offset lookups for every token pair.
    pub fn index_maps(&self, grid_h: usize, grid_w: usize, has_cls: bool) -> Result<(IndexMap, IndexMap)> {
        let off = usize::from(has_cls);
        let n = grid_h * grid_w + off;
        let coord = |t: usize| (t >= off).then(|| (((t - off) / grid_w) as isize, ((t - off) % grid_w) as isize));
        let mut rows = Vec::with_capacity(n * n);
        let mut cols = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                match (coord(i), coord(j)) {
                    (Some((ri, ci)), Some((rj, cj))) => {
                        rows.push(Some(self.offset_index(rj - ri)));
                        cols.push(Some(self.offset_index(cj - ci)));
                    }
                    _ => {
                        rows.push(None);
                        cols.push(None);
                    }
                }
            }
        }
        Ok((
            IndexMap::new(n, n, self.table_len(), rows)?,
            IndexMap::new(n, n, self.table_len(), cols)?,
        ))
    }

    /// Binds the bias to a concrete token layout for one forward pass.
    pub fn for_grid(&self, grid_h: usize, grid_w: usize, has_cls: bool) -> Result<GridRelativeBias<'_>> {
        let (rows, cols) = self.index_maps(grid_h, grid_w, has_cls)?;
        Ok(GridRelativeBias {
            bias: self,
            tokens: rows.rows,
            rows: Rc::new(rows),
            cols: Rc::new(cols),
        })
    }

    pub fn num_params(&self) -> usize {
        let per = self.table_len() * self.head_dim;
        2 * per + if self.value_tables.is_some() { 2 * per } else { 0 }
    }
}

/// A [`RelativeBias`] bound to the grid layout of the current input.
pub struct GridRelativeBias<'r> {
    bias: &'r RelativeBias,
    tokens: usize,
    rows: Rc<IndexMap>,
    cols: Rc<IndexMap>,
}

impl GridRelativeBias<'_> {
    fn check(&self, shape: &[usize]) -> Result<()> {
        if shape.len() != 4 || shape[2] != self.tokens {
            return Err(Error::contract(format!(
                "relative bias built for {} tokens with grid coordinates, attention has shape {shape:?}",
                self.tokens
            )));
        }
        Ok(())
    }
}

impl<T: Float> AttentionBias<T> for GridRelativeBias<'_> {
    fn score_bias<'a>(&self, b: &Binder<'a, T>, q: Var<'a, T>) -> Result<Var<'a, T>> {
        self.check(&q.shape())?;
        let qr = q.matmul(b.param(self.bias.key_row).transpose()?)?;
        let qc = q.matmul(b.param(self.bias.key_col).transpose()?)?;
        qr.gather_last(self.rows.clone())?.add(qc.gather_last(self.cols.clone())?)
    }

    fn value_bias<'a>(&self, b: &Binder<'a, T>, attn: Var<'a, T>) -> Result<Option<Var<'a, T>>> {
        let Some((vr, vc)) = self.bias.value_tables else {
            return Ok(None);
        };
        self.check(&attn.shape())?;
        let by_row = attn.scatter_last(self.rows.clone())?.matmul(b.param(vr))?;
        let by_col = attn.scatter_last(self.cols.clone())?.matmul(b.param(vc))?;
        Ok(Some(by_row.add(by_col)?))
    }
}

/// Zeroes every table of `bias` in `store`.
pub fn zero_tables<T: Float>(bias: &RelativeBias, store: &mut ParamStore<T>) {
    let mut ids = vec![bias.key_row, bias.key_col];
    if let Some((a, c)) = bias.value_tables {
        ids.extend([a, c]);
    }
    for id in ids {
        let shape = store.value(id).shape().to_vec();
        store.get_mut(id).value = Tensor::zeros(shape);
    }
}
