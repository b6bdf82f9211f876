use std::collections::BTreeSet;

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use super::report::ProbeReport;
use super::oracle::conv_expansion_oracle_tokens;
use super::tol;
use crate::autodiff::Tape;
use crate::error::{Error, Result};
use crate::grid::{permute_tokens, roll_images, roll_tokens, TokenGrid};
use crate::model::{build_model, Head, ModelConfig};
use crate::nn::{Activation, Binder, BlockSpec, EncoderBlock, KernelInit, NormPlacement, Padding, ParamStore};
use crate::pos_encoding::{peg_forward, EncodingScheme, Peg, PegFunction, PegSpec};
use crate::rng::{permutation, Seed};
use crate::tensor::Tensor;

/// What a translation probe shifts.
#[derive(Clone, Debug)]
pub enum TranslationSubject {
    /// A stack of `layers` PEG convolutions on a random token grid (64-bit).
    Peg {
        grid: (usize, usize),
        dim: usize,
        kernel: usize,
        layers: usize,
    },
    /// A full model; shifts are in whole patches and compare logits (32-bit).
    Model(ModelConfig),
}

/// Where random probe inputs are allowed to be non-zero.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Content {
    /// Zero outside a margin wide enough that the shift never moves content
    /// into the reach of the zero padding.
    MarginRespecting,
    /// Non-zero everywhere, touching the border.
    FullSupport,
}

fn shift_text(shift: (isize, isize)) -> String {
    format!("{},{}", shift.0, shift.1)
}

/// Compares `f(shift(x))` with `shift(f(x))`.
///
/// Circular padding passes for any input. With zero padding the identity is
/// only claimed for margin-respecting content; full-support content is run
/// for information and always reported as passing.
pub fn translation_probe(
    subject: &TranslationSubject,
    shift: (isize, isize),
    padding: Padding,
    content: Content,
    seed: u64,
) -> Result<ProbeReport> {
    match subject {
        TranslationSubject::Peg {
            grid,
            dim,
            kernel,
            layers,
        } => peg_translation(*grid, *dim, *kernel, *layers, shift, padding, content, seed),
        TranslationSubject::Model(cfg) => model_translation(cfg, shift, padding, seed),
    }
}

#[allow(clippy::too_many_arguments)]
fn peg_translation(
    grid: (usize, usize),
    dim: usize,
    kernel: usize,
    layers: usize,
    shift: (isize, isize),
    padding: Padding,
    content: Content,
    seed: u64,
) -> Result<ProbeReport> {
    let root = Seed(seed);
    let (h, w) = grid;
    let reach = layers * (kernel / 2);
    let margin = shift.0.unsigned_abs().max(shift.1.unsigned_abs()) + reach;
    let bounded = padding != Padding::Circular && content == Content::MarginRespecting;
    if bounded && (2 * margin >= h || 2 * margin >= w) {
        return Err(Error::contract(format!(
            "a {h}x{w} grid cannot hold content with margin {margin} for shift {} and a {kernel}x{kernel} kernel",
            shift_text(shift)
        )));
    }
    let spec = PegSpec {
        kernel,
        layers,
        function: PegFunction::Depthwise,
        padding,
        positions: BTreeSet::from([0]),
        init: KernelInit::ConvUniform,
    };
    let mut store = ParamStore::<f64>::new();
    let peg = Peg::new(&mut store, "peg", dim, &spec, &mut root.stream("probe/translation/kernel"))?;
    let mut rng = root.stream("probe/translation/input");
    let x = Tensor::<f64>::from_fn(vec![1, h * w, dim], |i| {
        let (y, xx) = ((i / dim) / w, (i / dim) % w);
        let inside = !bounded || (y >= margin && y < h - margin && xx >= margin && xx < w - margin);
        if inside {
            rng.gen_range(-1.0..1.0)
        } else {
            0.0
        }
    });
    let run = |input: &Tensor<f64>| -> Result<Tensor<f64>> {
        let tape = Tape::new();
        let b = Binder::inference(&tape, &store);
        let g = TokenGrid::new(tape.constant(input.clone()), h, w, false)?;
        Ok((*peg_forward(&b, g, &peg)?.tokens.value()).clone())
    };
    let lhs = run(&roll_tokens(&x, grid, shift, false))?;
    let rhs = roll_tokens(&run(&x)?, grid, shift, false);
    let dev = lhs.max_abs_diff(&rhs);
    let informational = padding != Padding::Circular && content == Content::FullSupport;
    let report = ProbeReport::new("translation", seed, tol::LAYER)
        .metric("subject", "peg")
        .metric("padding", padding)
        .metric("shift", shift_text(shift))
        .metric("content", if bounded { "margin" } else { "full" })
        .metric("max_dev", format!("{dev:e}"))
        .metric("informational", informational);
    Ok(report.with_status(informational || dev <= tol::LAYER))
}

fn model_translation(cfg: &ModelConfig, shift: (isize, isize), padding: Padding, seed: u64) -> Result<ProbeReport> {
    let mut cfg = cfg.clone();
    if let EncodingScheme::Peg(spec) = &mut cfg.scheme {
        spec.padding = padding;
    }
    let model = build_model::<f32>(&cfg, seed)?;
    let mut rng = Seed(seed).stream("probe/translation/images");
    let s = cfg.image_size;
    let img = Tensor::<f32>::from_fn(vec![2, cfg.channels, s, s], |_| rng.gen_range(-1.0..1.0));
    let px = (shift.0 * cfg.patch as isize, shift.1 * cfg.patch as isize);
    let base = model.predict(&img)?;
    let moved = model.predict(&roll_images(&img, px))?;
    let dev = base.max_abs_diff(&moved);
    let report = ProbeReport::new("translation", seed, tol::MODEL)
        .metric("subject", "model")
        .metric("head", cfg.head)
        .metric("padding", padding)
        .metric("shift_patches", shift_text(shift))
        .metric("max_dev", format!("{dev:e}"));
    Ok(report.with_status(dev <= tol::MODEL))
}

/// What a permutation probe permutes.
#[derive(Clone, Debug)]
pub enum PermutationSubject {
    /// Encoder blocks without any positional information.
    PlainStack { dim: usize, heads: usize, depth: usize, tokens: usize },
    /// A PEG followed by encoder blocks, on a token grid.
    PegStack {
        dim: usize,
        heads: usize,
        depth: usize,
        grid: (usize, usize),
        kernel: usize,
        padding: Padding,
    },
}

/// Applies random token permutations `P` and measures `‖f(P·x) − P·f(x)‖∞`.
///
/// A plain stack passes when every trial is within the model tolerance; a
/// PEG stack passes when at least one trial deviates by more than
/// [`tol::VARIANCE`]. The identity permutation is always included and must
/// give exactly zero deviation.
pub fn permutation_probe(subject: &PermutationSubject, trials: usize, seed: u64) -> Result<ProbeReport> {
    if trials < 20 {
        return Err(Error::contract(format!("permutation probe needs at least 20 trials, got {trials}")));
    }
    let root = Seed(seed);
    let (dim, heads, depth) = match *subject {
        PermutationSubject::PlainStack { dim, heads, depth, .. } | PermutationSubject::PegStack { dim, heads, depth, .. } => {
            (dim, heads, depth)
        }
    };
    let mut store = ParamStore::<f32>::new();
    let spec = BlockSpec {
        dim,
        heads,
        hidden: 4 * dim,
        activation: Activation::Relu,
        placement: NormPlacement::Post,
        qkv_bias: true,
    };
    let mut brng = root.stream("probe/permutation/blocks");
    let blocks = (0..depth)
        .map(|i| EncoderBlock::new(&mut store, &format!("b{i}"), spec, &mut brng))
        .collect::<Result<Vec<_>>>()?;
    let (n, grid, peg) = match *subject {
        PermutationSubject::PlainStack { tokens, .. } => (tokens, (tokens, 1), None),
        PermutationSubject::PegStack {
            grid, kernel, padding, ..
        } => {
            let spec = PegSpec {
                kernel,
                padding,
                ..PegSpec::default()
            };
            let peg = Peg::new(&mut store, "peg", dim, &spec, &mut root.stream("probe/permutation/peg"))?;
            (grid.0 * grid.1, grid, Some(peg))
        }
    };
    let run = |x: &Tensor<f32>| -> Result<Tensor<f32>> {
        let tape = Tape::new();
        let b = Binder::inference(&tape, &store);
        let mut g = TokenGrid::new(tape.constant(x.clone()), grid.0, grid.1, false)?;
        if let Some(p) = &peg {
            g = peg_forward(&b, g, p)?;
        }
        let mut t = g.tokens;
        for blk in &blocks {
            t = blk.forward(&b, t, None)?.output;
        }
        Ok((*t.value()).clone())
    };
    let mut rng = root.stream("probe/permutation/trials");
    let x = Tensor::<f32>::from_fn(vec![2, n, dim], |_| rng.gen_range(-1.0..1.0));
    let fx = run(&x)?;
    let identity: Vec<usize> = (0..n).collect();
    let id_dev = run(&permute_tokens(&x, &identity))?.max_abs_diff(&permute_tokens(&fx, &identity));
    let mut devs = Vec::with_capacity(trials);
    for _ in 0..trials {
        let mut perm = permutation(&mut rng, n);
        if perm == identity && n > 1 {
            perm.swap(0, 1);
        }
        let dev = run(&permute_tokens(&x, &perm))?.max_abs_diff(&permute_tokens(&fx, &perm));
        devs.push(dev);
    }
    let max = devs.iter().cloned().fold(0.0, f64::max);
    let min = devs.iter().cloned().fold(f64::INFINITY, f64::min);
    let over = devs.iter().filter(|&&d| d > tol::VARIANCE).count();
    let (kind, passed, tolerance) = match subject {
        PermutationSubject::PlainStack { .. } => ("plain", max <= tol::MODEL, tol::MODEL),
        PermutationSubject::PegStack { .. } => ("peg", over >= 1, tol::VARIANCE),
    };
    let report = ProbeReport::new("permutation", seed, tolerance)
        .metric("subject", kind)
        .metric("trials", trials)
        .metric("max_dev", format!("{max:e}"))
        .metric("min_dev", format!("{min:e}"))
        .metric("trials_over_variance", over)
        .metric("identity_dev", format!("{id_dev:e}"));
    Ok(report.with_status(passed && id_dev == 0.0))
}

/// Configuration of the coordinate-readout leakage probe.
#[derive(Clone, Debug, PartialEq)]
pub struct LeakageSetup {
    pub grid: usize,
    pub channels: usize,
    pub layers: usize,
    pub kernel: usize,
    pub images: usize,
    pub train_fraction: f64,
    pub init: KernelInit,
    /// Feed constant images instead of uniform noise.
    pub constant_images: bool,
}

impl Default for LeakageSetup {
    fn default() -> Self {
        LeakageSetup {
            grid: 14,
            channels: 64,
            layers: 4,
            kernel: 3,
            images: 40,
            train_fraction: 0.7,
            init: KernelInit::ConvUniform,
            constant_images: false,
        }
    }
}

/// Per-token features of a fixed random PEG stack (`layers` residual
/// depthwise convolutions) over random token grids, with each token's
/// normalized `(row, col)` coordinate. Returns rows of features and targets
/// in image-major order.
pub fn leakage_features(setup: &LeakageSetup, padding: Padding, seed: u64) -> Result<(Vec<Vec<f64>>, Vec<[f64; 2]>)> {
    let root = Seed(seed);
    let g = setup.grid;
    let c = setup.channels;
    let mut store = ParamStore::<f64>::new();
    let spec = PegSpec {
        kernel: setup.kernel,
        layers: 1,
        padding,
        init: setup.init,
        ..PegSpec::default()
    };
    let mut krng = root.stream("probe/leakage/kernels");
    let pegs = (0..setup.layers)
        .map(|i| Peg::new(&mut store, &format!("peg{i}"), c, &spec, &mut krng))
        .collect::<Result<Vec<_>>>()?;
    let mut irng = root.stream("probe/leakage/images");
    let images = if setup.constant_images {
        Tensor::<f64>::from_fn(vec![setup.images, g * g, c], |i| 0.25 + (i / (g * g * c)) as f64 * 0.01)
    } else {
        Tensor::<f64>::from_fn(vec![setup.images, g * g, c], |_| irng.gen_range(0.0..1.0))
    };
    let tape = Tape::new();
    let b = Binder::inference(&tape, &store);
    let mut grid = TokenGrid::new(tape.constant(images), g, g, false)?;
    for p in &pegs {
        grid = peg_forward(&b, grid, p)?;
    }
    let out = grid.tokens.value();
    let features: Vec<Vec<f64>> = out.data().chunks(c).map(|r| r.to_vec()).collect();
    let denom = (g.max(2) - 1) as f64;
    let coords = (0..setup.images)
        .flat_map(|_| (0..g * g).map(move |t| [(t / g) as f64 / denom, (t % g) as f64 / denom]))
        .collect();
    Ok((features, coords))
}

/// Held-out R² of a ridge-regularized least-squares linear readout (with
/// intercept) from features to 2-D targets, pooled over both targets.
pub fn coordinate_r2(features: &[Vec<f64>], targets: &[[f64; 2]], train: &[bool]) -> f64 {
    let p = features.first().map_or(0, Vec::len) + 1;
    let row = |f: &[f64]| DVector::from_iterator(p, f.iter().copied().chain([1.0]));
    let mut ata = DMatrix::<f64>::zeros(p, p);
    let mut atb = DMatrix::<f64>::zeros(p, 2);
    for ((f, t), &is_train) in features.iter().zip(targets).zip(train) {
        if !is_train {
            continue;
        }
        let x = row(f);
        ata.ger(1.0, &x, &x, 1.0);
        for k in 0..2 {
            let mut col = atb.column_mut(k);
            col.axpy(t[k], &x, 1.0);
        }
    }
    for i in 0..p {
        ata[(i, i)] += tol::RIDGE;
    }
    let beta = match ata.clone().cholesky() {
        Some(ch) => ch.solve(&atb),
        None => ata.lu().solve(&atb).unwrap_or_else(|| DMatrix::zeros(p, 2)),
    };
    let test: Vec<usize> = (0..features.len()).filter(|&i| !train[i]).collect();
    let mut mean = [0.0; 2];
    for &i in &test {
        for k in 0..2 {
            mean[k] += targets[i][k] / test.len() as f64;
        }
    }
    let (mut ss_res, mut ss_tot) = (0.0, 0.0);
    for &i in &test {
        let x = row(&features[i]);
        for k in 0..2 {
            let pred = x.dot(&beta.column(k));
            ss_res += (targets[i][k] - pred).powi(2);
            ss_tot += (targets[i][k] - mean[k]).powi(2);
        }
    }
    if ss_tot == 0.0 {
        0.0
    } else {
        1.0 - ss_res / ss_tot
    }
}

/// Measures how well token coordinates can be linearly read out of
/// fixed-random PEG features, with zero versus circular padding. Passes when
/// `R²(zero) − R²(circular) ≥ 0.2`.
///
/// This is the desk-scale stand-in for "zero padding lets the network know
/// absolute positions": circular padding has no border, so any readable
/// position signal must come from the padding.
pub fn position_leakage_probe(setup: &LeakageSetup, seed: u64) -> Result<ProbeReport> {
    let mut report = ProbeReport::new("position_leakage", seed, tol::LEAKAGE_GAP)
        .metric("grid", format!("{0}x{0}", setup.grid))
        .metric("channels", setup.channels)
        .metric("layers", setup.layers)
        .metric("init", setup.init);
    if setup.grid < 2 {
        report.push("reason", "degenerate_grid");
        return Ok(report.with_status(false));
    }
    let n_train_images = ((setup.images as f64) * setup.train_fraction).round() as usize;
    if n_train_images == 0 || n_train_images >= setup.images {
        return Err(Error::config("train_fraction", "split leaves no training or no held-out images"));
    }
    let tokens = setup.grid * setup.grid;
    let train: Vec<bool> = (0..setup.images * tokens).map(|i| i / tokens < n_train_images).collect();
    let mut r2 = [0.0; 2];
    for (slot, padding) in [Padding::Zero, Padding::Circular].into_iter().enumerate() {
        let (f, t) = leakage_features(setup, padding, seed)?;
        r2[slot] = coordinate_r2(&f, &t, &train);
    }
    let gap = r2[0] - r2[1];
    report.push("r2_zero", format!("{:.6}", r2[0]));
    report.push("r2_circular", format!("{:.6}", r2[1]));
    report.push("gap", format!("{gap:.6}"));
    Ok(report.with_status(gap >= tol::LEAKAGE_GAP))
}

/// A GAP model whose only positional component is a circular PEG.
pub fn toroidal_gap_config(base: &ModelConfig) -> ModelConfig {
    let mut cfg = base.clone();
    cfg.head = Head::Gap;
    let mut spec = cfg.scheme.peg_spec().cloned().unwrap_or_default();
    spec.padding = Padding::Circular;
    cfg.scheme = EncodingScheme::Peg(spec);
    cfg
}


/// Zero-padded single-layer PEG against the brute-force double sum over
/// random kernels and grids up to 8×8, cycling `k` through 1, 3 and 5.
pub fn conv_expansion_probe(trials: usize, seed: u64) -> Result<ProbeReport> {
    let root = Seed(seed);
    let mut worst: f64 = 0.0;
    for t in 0..trials {
        let mut rng = root.child_indexed("probe/conv_expansion", t).stream("trial");
        let k = [1, 3, 5][t % 3];
        let (h, w, dim) = (rng.gen_range(1..=8), rng.gen_range(1..=8), rng.gen_range(1..=4));
        let spec = PegSpec {
            kernel: k,
            ..PegSpec::default()
        };
        let mut store = ParamStore::<f64>::new();
        let peg = Peg::new(&mut store, "peg", dim, &spec, &mut rng)?;
        let id = peg.param_ids()[0];
        store.get_mut(id).value = Tensor::from_fn(vec![dim, k, k], |_| rng.gen_range(-1.0..1.0));
        let x = Tensor::<f64>::from_fn(vec![2, h * w, dim], |_| rng.gen_range(-1.0..1.0));
        let tape = Tape::new();
        let b = Binder::inference(&tape, &store);
        let g = TokenGrid::new(tape.constant(x.clone()), h, w, false)?;
        let got = peg_forward(&b, g, &peg)?.tokens.value();
        let expect = conv_expansion_oracle_tokens(&x, store.value(id), (h, w));
        worst = worst.max(got.max_abs_diff(&expect));
    }
    let report = ProbeReport::new("conv_expansion", seed, tol::ORACLE)
        .metric("trials", trials)
        .metric("max_dev", format!("{worst:e}"));
    Ok(report.with_status(trials > 0 && worst <= tol::ORACLE))
}
