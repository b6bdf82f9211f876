use std::collections::BTreeSet;

use cpvt_core::autodiff::Tape;
use cpvt_core::nn::{Binder, KernelInit, Mhsa, Padding, ParamStore};
use cpvt_core::pos_encoding::{
    apply_scheme, peg_forward, peg_forward_masked, sincos_2d, sinusoidal_pe, zero_tables, EncodingScheme, Peg,
    PegFunction, PegLayer, PegSpec, Phase, PositionalEncoder, RelativeBias,
};
use cpvt_core::verify::conv_expansion_oracle_tokens;
use cpvt_core::{Error, Seed, Tensor, TokenGrid};
use rand::Rng;

mod common;
use common::{reference_sinusoid, HIGH_PRECISION};

fn rand_tensor(seed: u64, shape: &[usize]) -> Tensor<f64> {
    let mut rng = Seed(seed).stream("test/input");
    Tensor::from_fn(shape.to_vec(), |_| rng.gen_range(-1.0..1.0))
}

fn spec(k: usize, padding: Padding, init: KernelInit) -> PegSpec {
    PegSpec {
        kernel: k,
        layers: 1,
        function: PegFunction::Depthwise,
        padding,
        positions: BTreeSet::from([0]),
        init,
    }
}

fn kernel_of(store: &ParamStore<f64>, peg: &Peg) -> Tensor<f64> {
    match &peg.layers[0] {
        PegLayer::Depthwise(c) => store.value(c.kernel).clone(),
        PegLayer::Separable(_) => unreachable!(),
    }
}

fn run_peg(store: &ParamStore<f64>, peg: &Peg, x: &Tensor<f64>, grid: (usize, usize), cls: bool) -> Tensor<f64> {
    let tape = Tape::new();
    let b = Binder::inference(&tape, store);
    let g = TokenGrid::new(tape.constant(x.clone()), grid.0, grid.1, cls).unwrap();
    let out = peg_forward(&b, g, peg).unwrap();
    let v = out.tokens.value();
    (*v).clone()
}

#[test]
fn zero_kernel_peg_is_identity() {
    let mut store = ParamStore::<f64>::new();
    let peg = Peg::new(&mut store, "p", 5, &spec(3, Padding::Zero, KernelInit::Zeros), &mut Seed(0).stream("i")).unwrap();
    let x = rand_tensor(1, &[2, 12, 5]);
    assert_eq!(run_peg(&store, &peg, &x, (3, 4), false), x);
}

#[test]
fn class_token_passes_bitwise() {
    let mut store = ParamStore::<f64>::new();
    let peg = Peg::new(&mut store, "p", 4, &spec(3, Padding::Zero, KernelInit::ConvUniform), &mut Seed(2).stream("i")).unwrap();
    let x = rand_tensor(3, &[2, 1 + 9, 4]);
    let y = run_peg(&store, &peg, &x, (3, 3), true);
    for bi in 0..2 {
        let at = bi * 10 * 4;
        assert_eq!(&y.data()[at..at + 4], &x.data()[at..at + 4]);
    }
    assert!(y.max_abs_diff(&x) > 0.0);
}

#[test]
fn peg_matches_direct_expansion() {
    for (k, grid) in [(1, (3, 5)), (3, (4, 4)), (5, (6, 3)), (3, (1, 1))] {
        let mut store = ParamStore::<f64>::new();
        let peg = Peg::new(&mut store, "p", 3, &spec(k, Padding::Zero, KernelInit::ConvUniform), &mut Seed(4).stream("i")).unwrap();
        let x = rand_tensor(5, &[2, grid.0 * grid.1, 3]);
        let y = run_peg(&store, &peg, &x, grid, false);
        let expect = conv_expansion_oracle_tokens(&x, &kernel_of(&store, &peg), grid);
        assert!(y.max_abs_diff(&expect) <= 1e-12, "k={k} grid={grid:?}");
    }
}

#[test]
fn single_cell_grid_scales_by_center_tap() {
    let mut store = ParamStore::<f64>::new();
    let peg = Peg::new(&mut store, "p", 2, &spec(3, Padding::Zero, KernelInit::ConvUniform), &mut Seed(6).stream("i")).unwrap();
    let x = rand_tensor(7, &[1, 1, 2]);
    let y = run_peg(&store, &peg, &x, (1, 1), false);
    let w = kernel_of(&store, &peg);
    for c in 0..2 {
        let expect = x.data()[c] * (1.0 + w.at(&[c, 1, 1]));
        assert!((y.data()[c] - expect).abs() <= 1e-15);
    }
}

#[test]
fn masked_peg_restores_padding_and_matches_unpadded_interior() {
    let (c, vh, vw, ph, pw) = (3, 3, 4, 5, 6);
    let mut store = ParamStore::<f64>::new();
    let peg = Peg::new(&mut store, "p", c, &spec(3, Padding::Zero, KernelInit::ConvUniform), &mut Seed(8).stream("i")).unwrap();
    let valid = rand_tensor(9, &[1, vh * vw, c]);
    let filler = rand_tensor(10, &[1, ph * pw, c]);
    let mut padded = Tensor::<f64>::zeros(vec![1, ph * pw, c]);
    let mut mask = vec![true; ph * pw];
    for r in 0..ph {
        for q in 0..pw {
            let p = r * pw + q;
            for ch in 0..c {
                padded.data_mut()[p * c + ch] = if r < vh && q < vw {
                    valid.data()[(r * vw + q) * c + ch]
                } else {
                    0.0
                };
            }
            mask[p] = !(r < vh && q < vw);
        }
    }
    let tape = Tape::new();
    let b = Binder::inference(&tape, &store);
    let g = TokenGrid::new(tape.constant(padded.clone()), ph, pw, false).unwrap();
    let out = peg_forward_masked(&b, g, &peg, &mask).unwrap().tokens.value().as_ref().clone();
    let alone = run_peg(&store, &peg, &valid, (vh, vw), false);
    for r in 0..ph {
        for q in 0..pw {
            let p = r * pw + q;
            for ch in 0..c {
                let got = out.data()[p * c + ch];
                if mask[p] {
                    assert_eq!(got, padded.data()[p * c + ch]);
                } else {
                    assert!((got - alone.data()[(r * vw + q) * c + ch]).abs() <= 1e-12);
                }
            }
        }
    }

    let g = TokenGrid::new(tape.constant(filler.clone()), ph, pw, false).unwrap();
    let none_masked = peg_forward_masked(&b, g, &peg, &vec![false; ph * pw]).unwrap().tokens.value().as_ref().clone();
    assert_eq!(none_masked, run_peg(&store, &peg, &filler, (ph, pw), false));
}

#[test]
fn masked_peg_rejects_bad_mask_length() {
    let mut store = ParamStore::<f64>::new();
    let peg = Peg::new(&mut store, "p", 2, &spec(3, Padding::Zero, KernelInit::Zeros), &mut Seed(0).stream("i")).unwrap();
    let tape = Tape::new();
    let b = Binder::inference(&tape, &store);
    let g = TokenGrid::new(tape.constant(rand_tensor(1, &[1, 4, 2])), 2, 2, false).unwrap();
    assert!(matches!(peg_forward_masked(&b, g, &peg, &[true; 3]), Err(Error::Contract(_))));
}

fn encoder(store: &mut ParamStore<f64>, scheme: EncodingScheme, grid: (usize, usize), cls: bool) -> PositionalEncoder {
    PositionalEncoder::new(store, &scheme, 8, 2, grid, cls, &mut Seed(11).stream("pos")).unwrap()
}

#[test]
fn scheme_none_is_identity_everywhere() {
    let mut store = ParamStore::<f64>::new();
    let enc = encoder(&mut store, EncodingScheme::None, (2, 3), true);
    let x = rand_tensor(12, &[2, 7, 8]);
    let tape = Tape::new();
    let b = Binder::inference(&tape, &store);
    for phase in [Phase::Input, Phase::AfterBlock(0), Phase::AfterBlock(3)] {
        let g = TokenGrid::new(tape.constant(x.clone()), 2, 3, true).unwrap();
        assert_eq!(*apply_scheme(&b, g, &enc, phase, false).unwrap().tokens.value(), x);
    }
}

#[test]
fn absolute_table_cannot_be_added_twice() {
    for scheme in [EncodingScheme::Learnable, EncodingScheme::SinCos2d, EncodingScheme::Sinusoidal1d] {
        let mut store = ParamStore::<f64>::new();
        let enc = encoder(&mut store, scheme, (2, 2), false);
        let tape = Tape::new();
        let b = Binder::inference(&tape, &store);
        let g = TokenGrid::new(tape.constant(rand_tensor(13, &[1, 4, 8])), 2, 2, false).unwrap();
        let once = apply_scheme(&b, g, &enc, Phase::Input, false).unwrap();
        assert!(matches!(apply_scheme(&b, once, &enc, Phase::Input, false), Err(Error::Contract(_))));
    }
}

#[test]
fn learnable_table_needs_resize_on_new_grid() {
    let mut store = ParamStore::<f64>::new();
    let enc = encoder(&mut store, EncodingScheme::Learnable, (2, 2), false);
    let tape = Tape::new();
    let b = Binder::inference(&tape, &store);
    let x = tape.constant(rand_tensor(14, &[1, 9, 8]));
    let g = TokenGrid::new(x, 3, 3, false).unwrap();
    assert!(matches!(apply_scheme(&b, g, &enc, Phase::Input, false), Err(Error::Resolution { .. })));
    let out = apply_scheme(&b, g, &enc, Phase::Input, true).unwrap();
    assert_eq!(out.tokens.shape(), vec![1, 9, 8]);
}

#[test]
fn peg_range_fires_at_each_listed_position() {
    let mut s = spec(3, Padding::Zero, KernelInit::ConvUniform);
    s.positions = (0..=4).collect();
    let mut store = ParamStore::<f64>::new();
    let enc = encoder(&mut store, EncodingScheme::Peg(s), (3, 3), false);
    assert_eq!(enc.pegs.len(), 5);
    assert_eq!(enc.peg_params(), 5 * 8 * 9);
    let x = rand_tensor(15, &[1, 9, 8]);
    let tape = Tape::new();
    let b = Binder::inference(&tape, &store);
    let fired: Vec<bool> = [Phase::Input, Phase::AfterBlock(0), Phase::AfterBlock(1), Phase::AfterBlock(2), Phase::AfterBlock(3), Phase::AfterBlock(4), Phase::AfterBlock(5)]
        .into_iter()
        .map(|phase| {
            let g = TokenGrid::new(tape.constant(x.clone()), 3, 3, false).unwrap();
            *apply_scheme(&b, g, &enc, phase, false).unwrap().tokens.value() != x
        })
        .collect();
    assert_eq!(fired, vec![false, true, true, true, true, true, false]);
}

fn attention_scores(store: &ParamStore<f64>, m: &Mhsa, rel: Option<&RelativeBias>, x: &Tensor<f64>, grid: (usize, usize), cls: bool) -> (Tensor<f64>, Tensor<f64>) {
    let tape = Tape::new();
    let b = Binder::inference(&tape, store);
    let bias = rel.map(|r| r.for_grid(grid.0, grid.1, cls).unwrap());
    let out = m
        .forward(&b, tape.constant(x.clone()), bias.as_ref().map(|g| g as &dyn cpvt_core::nn::AttentionBias<f64>))
        .unwrap();
    let (o, s) = (out.output.value().as_ref().clone(), out.scores.value().as_ref().clone());
    (o, s)
}

#[test]
fn zero_relative_tables_reduce_to_plain_attention() {
    let mut store = ParamStore::<f64>::new();
    let m = Mhsa::new(&mut store, "a", 8, 2, true, &mut Seed(16).stream("i")).unwrap();
    let rel = RelativeBias::new(&mut store, "rel", 2, 4, true, &mut Seed(17).stream("i"));
    zero_tables(&rel, &mut store);
    let x = rand_tensor(18, &[2, 1 + 12, 8]);
    let with = attention_scores(&store, &m, Some(&rel), &x, (3, 4), true);
    let without = attention_scores(&store, &m, None, &x, (3, 4), true);
    assert!(with.0.max_abs_diff(&without.0) <= 1e-12);
    assert!(with.1.max_abs_diff(&without.1) <= 1e-12);
}

#[test]
fn offsets_are_clipped_per_axis() {
    let mut store = ParamStore::<f64>::new();
    let rel = RelativeBias::new(&mut store, "rel", 2, 4, false, &mut Seed(19).stream("i"));
    assert_eq!(rel.table_len(), 5);
    assert_eq!(rel.num_params(), 2 * 5 * 4);
    assert_eq!(rel.offset_index(-6), 0);
    assert_eq!(rel.offset_index(-1), 1);
    assert_eq!(rel.offset_index(0), 2);
    assert_eq!(rel.offset_index(6), 4);
    let (rows, cols) = rel.index_maps(1, 7, false).unwrap();
    assert_eq!(rows.rows, 7);
    assert_eq!(cols.get(0, 6), Some(4));
    assert_eq!(cols.get(6, 0), Some(0));
    assert_eq!(cols.get(3, 4), Some(3));
    assert_eq!(rows.get(3, 4), Some(2));
    let (rows, _) = rel.index_maps(2, 2, true).unwrap();
    assert_eq!(rows.get(0, 3), None);
    assert_eq!(rows.get(4, 1), Some(1));
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn project(store: &ParamStore<f64>, l: &cpvt_core::nn::Linear, x: &[f64]) -> Vec<f64> {
    let w = store.value(l.weight);
    let dout = w.shape()[1];
    (0..dout)
        .map(|j| (0..x.len()).map(|i| x[i] * w.data()[i * dout + j]).sum::<f64>() + l.bias.map_or(0.0, |b| store.value(b).data()[j]))
        .collect()
}

#[test]
fn two_token_bias_is_added_before_scaling() {
    let dk = 4;
    for (grid, cls) in [((1, 2), false), ((2, 1), false), ((1, 1), true)] {
        let mut store = ParamStore::<f64>::new();
        let m = Mhsa::new(&mut store, "a", dk, 1, true, &mut Seed(20).stream("i")).unwrap();
        let rel = RelativeBias::new(&mut store, "rel", 1, dk, false, &mut Seed(21).stream("i"));
        for id in [rel.key_row, rel.key_col] {
            store.get_mut(id).value = rand_tensor(22 + id.index() as u64, &[3, dk]);
        }
        let x = rand_tensor(23, &[1, 2, dk]);
        let (_, scores) = attention_scores(&store, &m, Some(&rel), &x, grid, cls);
        let tok = |t: usize| &x.data()[t * dk..(t + 1) * dk];
        let q: Vec<_> = (0..2).map(|t| project(&store, &m.query, tok(t))).collect();
        let k: Vec<_> = (0..2).map(|t| project(&store, &m.key, tok(t))).collect();
        let (rt, ct) = (store.value(rel.key_row), store.value(rel.key_col));
        let row = |i: usize| &rt.data()[i * dk..(i + 1) * dk];
        let col = |i: usize| &ct.data()[i * dk..(i + 1) * dk];
        for i in 0..2 {
            let logits: Vec<f64> = (0..2)
                .map(|j| {
                    let bias = if cls && (i == 0 || j == 0) {
                        0.0
                    } else {
                        let step = if cls { 0 } else { j as isize - i as isize };
                        let (dr, dc) = if grid == (1, 2) { (0, step) } else { (step, 0) };
                        let a: Vec<f64> = row((dr + 1) as usize).iter().zip(col((dc + 1) as usize)).map(|(p, q)| p + q).collect();
                        dot(&q[i], &a)
                    };
                    (dot(&q[i], &k[j]) + bias) / (dk as f64).sqrt()
                })
                .collect();
            let z = logits[0].exp() + logits[1].exp();
            for j in 0..2 {
                let expect = logits[j].exp() / z;
                assert!((scores.data()[i * 2 + j] - expect).abs() <= 1e-12, "{grid:?} {cls}");
            }
        }
    }
}

#[test]
fn sinusoid_matches_reference_over_full_range() {
    let mut worst = 0.0f64;
    for d in (2..=256).step_by(2) {
        let t = sinusoidal_pe::<f64>(513, d).unwrap();
        for pos in 0..=512 {
            for j in 0..d {
                worst = worst.max((t.data()[pos * d + j] - reference_sinusoid(pos, d, j)).abs());
            }
        }
    }
    assert!(worst <= 1e-12, "{worst}");
}

#[test]
fn sinusoid_matches_high_precision_values() {
    for &(pos, d, j, v) in HIGH_PRECISION {
        let t = sinusoidal_pe::<f64>(pos + 1, d).unwrap();
        let expect: f64 = v.parse().unwrap();
        let got = t.data()[pos * d + j];
        assert!((got - expect).abs() <= 1e-12, "pos={pos} d={d} j={j}: {got} vs {expect}");
    }
}

#[test]
fn sincos_2d_matches_reference_on_standard_grid() {
    let (h, w, d) = (14, 14, 192);
    let t = sincos_2d::<f64>(h, w, d).unwrap();
    let half = d / 2;
    for r in 0..h {
        for c in 0..w {
            for ch in 0..d {
                let expect = if ch < half {
                    reference_sinusoid(r, half, ch)
                } else {
                    reference_sinusoid(c, half, ch - half)
                };
                assert!((t.data()[(r * w + c) * d + ch] - expect).abs() <= 1e-12);
            }
        }
    }
}
