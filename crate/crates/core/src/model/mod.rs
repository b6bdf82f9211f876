//! Vision transformer assembly: patch embedding, positional scheme, encoder
//! stack, and a class-token or pooled classification head.

mod checkpoint;
mod config;

pub use checkpoint::{load_checkpoint, save_checkpoint, DynModel, CHECKPOINT_VERSION, MAGIC};
pub use config::{parse_kv_lines, Head, ModelConfig, CONFIG_KEYS};

use crate::autodiff::{concat, Tape, Var};
use crate::error::{Error, Result};
use crate::grid::TokenGrid;
use crate::nn::{AttentionBias, Binder, BlockSpec, EncoderBlock, LayerNorm, Linear, ParamId, ParamStore, PatchEmbed};
use crate::pos_encoding::{apply_scheme, EncodingScheme, Phase, PositionalEncoder};
use crate::rng::Seed;
use crate::tensor::{Float, Tensor};

#[derive(Clone, Debug)]
pub struct Model<T: Float> {
    pub cfg: ModelConfig,
    pub store: ParamStore<T>,
    pub patch: PatchEmbed,
    pub cls: Option<ParamId>,
    pub encoder: PositionalEncoder,
    pub blocks: Vec<EncoderBlock>,
    pub norm: LayerNorm,
    pub classifier: Linear,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ForwardOptions {
    /// Resample a learnable table when the input grid differs from the build grid.
    pub resize_pe: bool,
}

pub struct ForwardOutput<'a, T: Float> {
    pub logits: Var<'a, T>,
    /// Normalized `[B, h, N, N]` scores for every block.
    pub scores: Vec<Var<'a, T>>,
    /// Final token states before the head, `[B, N, d]`.
    pub features: TokenGrid<'a, T>,
}

/// Softmax-normalized scores of one head of one layer for one image.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionRecord {
    pub layer: usize,
    pub head: usize,
    pub image: usize,
    /// Side length `N` (includes the class token when present).
    pub tokens: usize,
    /// Row-major `N×N`; row `i` is the distribution of query `i` over keys.
    pub scores: Vec<f64>,
    pub normalization: &'static str,
}

impl AttentionRecord {
    pub fn row(&self, i: usize) -> &[f64] {
        &self.scores[i * self.tokens..(i + 1) * self.tokens]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Complexity {
    pub params: usize,
    pub peg_params: usize,
    /// Learnable absolute table over the grid (class-token entry excluded).
    pub pos_table_params: usize,
    /// Multiply-accumulates for one image at the build resolution.
    pub flops: u64,
    pub peg_flops: u64,
}

/// Builds a model with every parameter drawn from named streams of `seed`.
pub fn build_model<T: Float>(cfg: &ModelConfig, seed: u64) -> Result<Model<T>> {
    cfg.validate()?;
    let root = Seed(seed);
    let mut store = ParamStore::new();
    let d = cfg.dim;
    let patch = PatchEmbed::new(&mut store, "patch", cfg.channels, cfg.patch, d, &mut root.stream("init/patch"));
    let cls = cfg.has_cls().then(|| store.add("cls", Tensor::zeros(vec![1, 1, d]), false));
    let encoder = PositionalEncoder::new(
        &mut store,
        &cfg.scheme,
        d,
        cfg.heads,
        cfg.grid(),
        cfg.has_cls(),
        &mut root.stream("init/pos"),
    )?;
    let spec = BlockSpec {
        dim: d,
        heads: cfg.heads,
        hidden: cfg.hidden(),
        activation: cfg.activation,
        placement: cfg.norm,
        qkv_bias: cfg.qkv_bias,
    };
    let blocks = (0..cfg.depth)
        .map(|i| {
            let mut rng = root.child_indexed("init/block", i).stream("block");
            EncoderBlock::new(&mut store, &format!("blocks.{i}"), spec, &mut rng)
        })
        .collect::<Result<Vec<_>>>()?;
    let norm = LayerNorm::new(&mut store, "norm", d);
    let classifier = Linear::new(&mut store, "head", d, cfg.classes, true, &mut root.stream("init/head"));
    Ok(Model {
        cfg: cfg.clone(),
        store,
        patch,
        cls,
        encoder,
        blocks,
        norm,
        classifier,
    })
}

impl<T: Float> Model<T> {
    /// Records a full forward pass of `[B, C, H, W]` images on the binder's tape.
    pub fn forward<'a>(&self, b: &Binder<'a, T>, images: Var<'a, T>, opts: ForwardOptions) -> Result<ForwardOutput<'a, T>> {
        let mut grid = self.patch.forward(b, images)?;
        if grid.seq_len() == 0 {
            return Err(Error::Input("image produced no tokens".into()));
        }
        if self.cfg.scheme == EncodingScheme::Learnable && !opts.resize_pe && (grid.grid_h, grid.grid_w) != self.encoder.build_grid {
            let (bh, bw) = self.encoder.build_grid;
            return Err(Error::Resolution {
                built_h: bh,
                built_w: bw,
                got_h: grid.grid_h,
                got_w: grid.grid_w,
            });
        }
        if let Some(cls) = self.cls {
            let c = b.param(cls).expand(grid.batch())?;
            grid = TokenGrid::new(concat(&[c, grid.tokens], 1)?, grid.grid_h, grid.grid_w, true)?;
        }
        grid = apply_scheme(b, grid, &self.encoder, Phase::Input, opts.resize_pe)?;
        let mut scores = Vec::with_capacity(self.blocks.len());
        for (i, block) in self.blocks.iter().enumerate() {
            let bias = self.encoder.attention_bias(&grid)?;
            let out = block.forward(b, grid.tokens, bias.as_ref().map(|x| x as &dyn AttentionBias<T>))?;
            scores.push(out.scores);
            grid = apply_scheme(b, grid.with_tokens(out.output), &self.encoder, Phase::AfterBlock(i), opts.resize_pe)?;
        }
        let normed = self.norm.forward(b, grid.tokens)?;
        let features = grid.with_tokens(normed);
        let pooled = if grid.has_cls {
            normed.slice(1, 0, 1)?.reshape(&[grid.batch(), self.cfg.dim])?
        } else {
            normed.mean(1)?
        };
        let logits = self.classifier.forward(b, pooled)?;
        Ok(ForwardOutput {
            logits,
            scores,
            features,
        })
    }

    fn run<R>(&self, images: &Tensor<T>, opts: ForwardOptions, f: impl FnOnce(ForwardOutput<'_, T>) -> Result<R>) -> Result<R> {
        let tape = Tape::new();
        let b = Binder::inference(&tape, &self.store);
        let out = self.forward(&b, tape.constant(images.clone()), opts)?;
        f(out)
    }

    /// Inference logits `[B, classes]` at the build resolution.
    pub fn predict(&self, images: &Tensor<T>) -> Result<Tensor<T>> {
        self.run(images, ForwardOptions::default(), |o| Ok((*o.logits.value()).clone()))
    }

    /// Inference at any resolution the scheme supports. A learnable table is
    /// resampled only when `resize_pe` is set; otherwise a grid change is a
    /// resolution error. Parameters are never modified.
    pub fn forward_variable_resolution(&self, images: &Tensor<T>, resize_pe: bool) -> Result<Tensor<T>> {
        self.run(images, ForwardOptions { resize_pe }, |o| Ok((*o.logits.value()).clone()))
    }

    /// Final token states `[B, N, d]` (after the last norm, before the head).
    pub fn features(&self, images: &Tensor<T>) -> Result<Tensor<T>> {
        self.run(images, ForwardOptions::default(), |o| Ok((*o.features.tokens.value()).clone()))
    }

    /// Normalized attention of every head at block `layer`, for each image.
    pub fn attention_scores(&self, images: &Tensor<T>, layer: usize) -> Result<Vec<AttentionRecord>> {
        if layer >= self.blocks.len() {
            return Err(Error::Input(format!(
                "layer {layer} out of range for a {}-block model",
                self.blocks.len()
            )));
        }
        self.run(images, ForwardOptions { resize_pe: true }, |o| {
            let s = o.scores[layer].value();
            let sh = s.shape();
            let (batch, heads, n) = (sh[0], sh[1], sh[2]);
            let mut out = Vec::with_capacity(batch * heads);
            for image in 0..batch {
                for head in 0..heads {
                    let off = (image * heads + head) * n * n;
                    out.push(AttentionRecord {
                        layer,
                        head,
                        image,
                        tokens: n,
                        scores: s.data()[off..off + n * n].iter().map(|v| v.as_f64()).collect(),
                        normalization: "softmax-row",
                    });
                }
            }
            Ok(out)
        })
    }

    /// Checksum over parameter names, shapes and values.
    pub fn checksum(&self) -> u64 {
        self.store.checksum()
    }

    /// Freezes or unfreezes every PEG kernel.
    pub fn set_peg_trainable(&mut self, trainable: bool) {
        let ids: Vec<_> = self.encoder.pegs.values().flat_map(|p| p.param_ids()).collect();
        for id in ids {
            self.store.set_trainable(id, trainable);
        }
    }

    /// Analytic parameter and multiply-accumulate counts at the build grid.
    ///
    /// FLOPs cover patch projection, q/k/v/out projections, the two attention
    /// products, the FFN, relative-bias lookups, PEG convolutions and the
    /// classifier. Normalization, softmax, activations and additions are not
    /// multiply-accumulates and are left out.
    pub fn count_params_flops(&self) -> Complexity {
        count_params_flops(self)
    }
}

pub fn count_params_flops<T: Float>(model: &Model<T>) -> Complexity {
    let cfg = &model.cfg;
    let (hg, wg) = cfg.grid();
    let grid_n = (hg * wg) as u64;
    let n = grid_n + u64::from(cfg.has_cls());
    let d = cfg.dim as u64;
    let patch_in = (cfg.channels * cfg.patch * cfg.patch) as u64;
    let mut flops = grid_n * patch_in * d;
    let per_block = 4 * n * d * d + 2 * n * n * d + 2 * n * d * cfg.hidden() as u64;
    flops += per_block * cfg.depth as u64;
    if let Some(r) = &model.encoder.relative {
        let lookups = if r.value_tables.is_some() { 4 } else { 2 };
        flops += cfg.depth as u64 * lookups * n * (r.table_len() as u64) * d;
    }
    let peg_flops = model.encoder.peg_flops(hg, wg);
    flops += peg_flops + d * cfg.classes as u64;
    Complexity {
        params: model.store.count(),
        peg_params: model.encoder.peg_params(),
        pos_table_params: model.encoder.learnable.as_ref().map_or(0, |l| model.store.value(l.grid).numel()),
        flops,
        peg_flops,
    }
}
