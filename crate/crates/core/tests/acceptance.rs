//! End-to-end acceptance run: one line per criterion, all must pass.

use std::rc::Rc;
use std::time::{Duration, Instant};

use cpvt_core::autodiff::{concat, grad_check_many, select, IndexMap, Tape, Var};
use cpvt_core::model::{build_model, load_checkpoint, save_checkpoint, Model, ModelConfig};
use cpvt_core::nn::{grad_check_module, Activation, Binder, BlockSpec, EncoderBlock, KernelInit, NormPlacement, Padding, ParamStore};
use cpvt_core::pos_encoding::{peg_forward, peg_forward_masked, sinusoidal_pe, EncodingScheme, Peg, PegSpec, RelativeBias};
use cpvt_core::verify::{
    conv_expansion_probe, permutation_probe, position_leakage_probe, tol, toroidal_gap_config, train_variant,
    translation_probe, ComparisonSetup, Content, LeakageSetup, PermutationSubject, TranslationSubject, Variant,
};
use cpvt_core::{Error, Result, Seed, Tensor, TokenGrid};
use rand::Rng;

mod common;
use common::{reference_sinusoid, HIGH_PRECISION};

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Result<Outcome> {
    Ok(Outcome {
        passed,
        detail: detail.into(),
    })
}

fn rand_tensor(seed: u64, shape: &[usize]) -> Tensor<f64> {
    let mut rng = Seed(seed).stream("acceptance/input");
    Tensor::from_fn(shape.to_vec(), |_| rng.gen_range(-1.0..1.0))
}

fn complexity() -> Result<Outcome> {
    let peg: Model<f32> = build_model(&ModelConfig::tiny(), 0)?;
    let learn: Model<f32> = build_model(
        &ModelConfig {
            scheme: EncodingScheme::Learnable,
            ..ModelConfig::tiny()
        },
        0,
    )?;
    let c = peg.count_params_flops();
    let table = learn.count_params_flops().pos_table_params;
    outcome(
        c.peg_params == 1728 && table == 37632 && c.peg_flops == 338688,
        format!("peg_params={} pos_table={} peg_flops={}", c.peg_params, table, c.peg_flops),
    )
}

fn oracle() -> Result<Outcome> {
    let r = conv_expansion_probe(50, 0)?;
    outcome(r.passed, format!("trials=50 max_dev={}", r.get("max_dev").unwrap_or("?")))
}

type OpCase = (&'static str, Vec<Tensor<f64>>, Box<dyn for<'t> Fn(&'t Tape<f64>, &[Var<'t, f64>]) -> Result<Var<'t, f64>>>);

fn op_cases() -> Vec<OpCase> {
    let r = rand_tensor;
    let mask = Rc::new(vec![true, false, true]);
    let idx = Rc::new(IndexMap::new(2, 3, 3, vec![Some(0), None, Some(2), Some(2), Some(1), Some(0)]).unwrap());
    let idx2 = idx.clone();
    let mut cases: Vec<OpCase> = vec![
        ("add", vec![r(1, &[2, 3]), r(2, &[2, 3])], Box::new(|_, v| v[0].add(v[1]))),
        ("sub", vec![r(3, &[2, 3]), r(4, &[2, 3])], Box::new(|_, v| v[0].sub(v[1]))),
        ("mul", vec![r(5, &[2, 3]), r(6, &[2, 3])], Box::new(|_, v| v[0].mul(v[1]))),
        ("scale", vec![r(7, &[4])], Box::new(|_, v| Ok(v[0].scale(0.3)))),
        ("relu", vec![r(8, &[6])], Box::new(|_, v| Ok(v[0].relu()))),
        ("gelu", vec![r(9, &[6])], Box::new(|_, v| Ok(v[0].gelu()))),
        ("sum", vec![r(10, &[2, 3])], Box::new(|_, v| Ok(v[0].sum()))),
        ("add_broadcast", vec![r(11, &[2, 3, 4]), r(12, &[4])], Box::new(|_, v| v[0].add_broadcast(v[1]))),
        ("matmul", vec![r(13, &[2, 3, 4]), r(14, &[4, 2])], Box::new(|_, v| v[0].matmul(v[1]))),
        ("reshape", vec![r(15, &[2, 6])], Box::new(|_, v| v[0].reshape(&[3, 4]))),
        ("transpose", vec![r(16, &[2, 3, 4])], Box::new(|_, v| v[0].transpose())),
        ("permute", vec![r(17, &[2, 3, 4])], Box::new(|_, v| v[0].permute(&[2, 0, 1]))),
        ("softmax", vec![r(18, &[3, 5])], Box::new(|_, v| v[0].softmax(1))),
        ("mean", vec![r(19, &[3, 5])], Box::new(|_, v| v[0].mean(0))),
        ("slice", vec![r(20, &[4, 3])], Box::new(|_, v| v[0].slice(0, 1, 2))),
        ("expand", vec![r(21, &[1, 2, 3])], Box::new(|_, v| v[0].expand(3))),
        ("concat", vec![r(22, &[2, 3]), r(23, &[1, 3])], Box::new(|_, v| concat(v, 0))),
        ("select", vec![r(24, &[3, 2]), r(25, &[3, 2])], Box::new(move |_, v| select(mask.clone(), v[0], v[1]))),
        (
            "layer_norm",
            vec![r(26, &[3, 5]), r(27, &[5]).map(|g| g + 1.5), r(28, &[5])],
            Box::new(|_, v| v[0].layer_norm(v[1], v[2], 1e-6)),
        ),
        ("gather_last", vec![r(29, &[2, 2, 3])], Box::new(move |_, v| v[0].gather_last(idx.clone()))),
        ("scatter_last", vec![r(30, &[2, 2, 3])], Box::new(move |_, v| v[0].scatter_last(idx2.clone()))),
        ("cross_entropy", vec![r(31, &[3, 4])], Box::new(|_, v| v[0].cross_entropy(&[0, 3, 1], 0.1))),
    ];
    for padding in [Padding::Zero, Padding::Circular, Padding::None] {
        cases.push((
            "depthwise_conv",
            vec![r(32, &[1, 4, 5, 2]), r(33, &[2, 3, 3])],
            Box::new(move |_, v| v[0].depthwise_conv(v[1], padding)),
        ));
    }
    cases
}

fn gradients() -> Result<Outcome> {
    let mut worst: f64 = 0.0;
    let mut worst_name = "";
    let cases = op_cases();
    let count = cases.len();
    for (name, inputs, f) in cases {
        let e = grad_check_many(|t, v| f(t, v), &inputs, tol::GRAD_EPS)?;
        if e > worst {
            worst = e;
            worst_name = name;
        }
    }
    let spec = BlockSpec {
        dim: 6,
        heads: 2,
        hidden: 12,
        activation: Activation::Gelu,
        placement: NormPlacement::Pre,
        qkv_bias: true,
    };
    let mut store = ParamStore::<f64>::new();
    let block = EncoderBlock::new(&mut store, "block", spec, &mut Seed(40).stream("init"))?;
    let peg = Peg::new(
        &mut store,
        "peg",
        6,
        &PegSpec {
            init: KernelInit::ConvUniform,
            ..PegSpec::default()
        },
        &mut Seed(41).stream("init"),
    )?;
    let rel = RelativeBias::new(&mut store, "rel", 1, 3, true, &mut Seed(42).stream("init"));
    let x = rand_tensor(43, &[1, 1 + 4, 6]);
    let block_err = grad_check_module(
        &store,
        std::slice::from_ref(&x),
        |b, xs| {
            let g = peg_forward(b, TokenGrid::new(xs[0], 2, 2, true)?, &peg)?;
            let bias = rel.for_grid(2, 2, true)?;
            Ok(block.forward(b, g.tokens, Some(&bias))?.output)
        },
        tol::GRAD_EPS,
    )?;
    let all = worst.max(block_err);
    outcome(
        all <= tol::GRAD,
        format!("ops={count} worst_op={worst_name}:{worst:.2e} encoder_block_with_peg_and_relative={block_err:.2e}"),
    )
}

fn invariances() -> Result<Outcome> {
    let a = permutation_probe(&PermutationSubject::PlainStack { dim: 16, heads: 2, depth: 2, tokens: 10 }, 20, 0)?;
    let b = permutation_probe(
        &PermutationSubject::PegStack {
            dim: 16,
            heads: 2,
            depth: 2,
            grid: (4, 4),
            kernel: 3,
            padding: Padding::Zero,
        },
        20,
        0,
    )?;
    let grid = (7, 7);
    let peg = |layers| TranslationSubject::Peg { grid, dim: 4, kernel: 3, layers };
    let mut c = true;
    for dy in 0..grid.0 as isize {
        for dx in 0..grid.1 as isize {
            c &= translation_probe(&peg(2), (dy, dx), Padding::Circular, Content::FullSupport, 0)?.passed;
        }
    }
    let mut d = true;
    for shift in [(1, 0), (0, 1), (-1, 1), (2, 0), (0, -2), (1, -1)] {
        d &= translation_probe(&peg(1), shift, Padding::Zero, Content::MarginRespecting, 0)?.passed;
    }
    let model = TranslationSubject::Model(toroidal_gap_config(&ModelConfig::toy()));
    let mut e = true;
    for dy in 0..4 {
        for dx in 0..4 {
            e &= translation_probe(&model, (dy, dx), Padding::Circular, Content::FullSupport, 0)?.passed;
        }
    }
    outcome(
        a.passed && b.passed && c && d && e,
        format!(
            "a_plain_max={} b_peg_max={} c_circular={c} d_zero_margin={d} e_gap_toroidal={e}",
            a.get("max_dev").unwrap_or("?"),
            b.get("max_dev").unwrap_or("?")
        ),
    )
}

fn length_generalization() -> Result<Outcome> {
    let cfg = ModelConfig {
        image_size: 32,
        patch: 8,
        ..ModelConfig::toy()
    };
    let peg: Model<f32> = build_model(&cfg, 0)?;
    let before = peg.checksum();
    let mut shapes_ok = true;
    for size in [48, 64] {
        let x = Tensor::<f32>::from_fn(vec![1, 1, size, size], |i| ((i % 7) as f32) * 0.1);
        shapes_ok &= peg.forward_variable_resolution(&x, false)?.shape() == [1, cfg.classes];
    }
    let unchanged = peg.checksum() == before;
    let learn: Model<f32> = build_model(
        &ModelConfig {
            scheme: EncodingScheme::Learnable,
            ..cfg.clone()
        },
        0,
    )?;
    let x = Tensor::<f32>::ones(vec![1, 1, 48, 48]);
    let refused = matches!(learn.forward_variable_resolution(&x, false), Err(Error::Resolution { .. }));
    let resized = learn.forward_variable_resolution(&x, true).is_ok();
    outcome(
        shapes_ok && unchanged && refused && resized,
        format!("grids=6x6,8x8 checksum_unchanged={unchanged} learnable_refused={refused} learnable_resized={resized}"),
    )
}

fn leakage() -> Result<Outcome> {
    let setup = LeakageSetup::default();
    let mut gaps = Vec::new();
    let mut wins = 0;
    for seed in 0..5 {
        let r = position_leakage_probe(&setup, seed)?;
        wins += usize::from(r.passed);
        gaps.push(r.get("gap").unwrap_or("?").to_string());
    }
    outcome(wins >= 4, format!("seeds_passing={wins}/5 gaps={}", gaps.join(",")))
}

fn sinusoid() -> Result<Outcome> {
    let mut worst: f64 = 0.0;
    for d in (2..=256).step_by(2) {
        let t = sinusoidal_pe::<f64>(513, d)?;
        for pos in 0..=512 {
            for j in 0..d {
                worst = worst.max((t.data()[pos * d + j] - reference_sinusoid(pos, d, j)).abs());
            }
        }
    }
    let mut worst_hp: f64 = 0.0;
    for &(pos, d, j, v) in HIGH_PRECISION {
        let t = sinusoidal_pe::<f64>(pos + 1, d)?;
        worst_hp = worst_hp.max((t.data()[pos * d + j] - v.parse::<f64>().unwrap()).abs());
    }
    outcome(
        worst <= tol::ORACLE && worst_hp <= tol::ORACLE,
        format!("sweep_max_dev={worst:.2e} high_precision_max_dev={worst_hp:.2e}"),
    )
}

fn masked_peg() -> Result<Outcome> {
    let (c, vh, vw, ph, pw) = (4, 5, 3, 8, 8);
    let mut store = ParamStore::<f64>::new();
    let spec = PegSpec {
        init: KernelInit::ConvUniform,
        ..PegSpec::default()
    };
    let peg = Peg::new(&mut store, "peg", c, &spec, &mut Seed(50).stream("init"))?;
    let valid = rand_tensor(51, &[1, vh * vw, c]);
    let mut padded = rand_tensor(52, &[1, ph * pw, c]);
    let mut mask = vec![true; ph * pw];
    for p in 0..ph * pw {
        let (r, q) = (p / pw, p % pw);
        if r < vh && q < vw {
            mask[p] = false;
            for ch in 0..c {
                padded.data_mut()[p * c + ch] = valid.data()[(r * vw + q) * c + ch];
            }
        }
    }
    let tape = Tape::new();
    let b = Binder::inference(&tape, &store);
    let out = peg_forward_masked(&b, TokenGrid::new(tape.constant(padded.clone()), ph, pw, false)?, &peg, &mask)?;
    let out = out.tokens.value();
    let plain = peg_forward(&b, TokenGrid::new(tape.constant(valid.clone()), vh, vw, false)?, &peg)?;
    let plain = plain.tokens.value();
    let mut exact = true;
    let mut interior: f64 = 0.0;
    for p in 0..ph * pw {
        let (r, q) = (p / pw, p % pw);
        for ch in 0..c {
            let got = out.data()[p * c + ch];
            if mask[p] {
                exact &= got.to_bits() == padded.data()[p * c + ch].to_bits();
            } else if r >= 1 && r + 1 < vh && q >= 1 && q + 1 < vw {
                interior = interior.max((got - plain.data()[(r * vw + q) * c + ch]).abs());
            }
        }
    }
    outcome(exact && interior <= tol::ORACLE, format!("masked_bitwise={exact} interior_max_dev={interior:.2e}"))
}

fn training_ordering() -> Result<Outcome> {
    let setup = ComparisonSetup::default();
    let variants = [Variant::NoneGap, Variant::FixedPegGap, Variant::PegGap, Variant::LearnableCls, Variant::NoneCls];
    let mut means = Vec::new();
    let mut slowest = Duration::ZERO;
    let mut complete = true;
    for v in variants {
        let mut accs = Vec::new();
        for &seed in &setup.seeds {
            let start = Instant::now();
            let (acc, _) = train_variant(&setup, v, seed)?;
            slowest = slowest.max(start.elapsed());
            match acc {
                Some(a) => accs.push(a),
                None => complete = false,
            }
        }
        means.push(accs.iter().sum::<f64>() / accs.len().max(1) as f64);
    }
    let [none_gap, fixed, peg, learnable, none_cls] = means[..] else { unreachable!() };
    let passed = complete
        && setup.seeds.len() >= 3
        && peg >= learnable
        && fixed - none_gap >= 0.02
        && slowest <= Duration::from_secs(300);
    outcome(
        passed,
        format!(
            "seeds={} peg_gap={peg:.4} learnable_cls={learnable:.4} none_cls={none_cls:.4} fixed_peg_gap={fixed:.4} none_gap={none_gap:.4} learnable_ge_none={} slowest_run={:.1}s",
            setup.seeds.len(),
            learnable >= none_cls,
            slowest.as_secs_f64()
        ),
    )
}

fn checkpoint() -> Result<Outcome> {
    let dir = tempfile::tempdir().expect("temp dir");
    let path = dir.path().join("model.bin");
    let model: Model<f32> = build_model(&ModelConfig::toy(), 9)?;
    save_checkpoint(&model, &path)?;
    let loaded = load_checkpoint(&path)?.into_f32().expect("f32 checkpoint");
    let x = Tensor::<f32>::from_fn(vec![2, 1, 32, 32], |i| ((i * 37 % 101) as f32) / 50.0 - 1.0);
    let (a, b) = (model.predict(&x)?, loaded.predict(&x)?);
    let bitwise = a.data().iter().zip(b.data()).all(|(p, q)| p.to_bits() == q.to_bits());
    let mut bytes = std::fs::read(&path).expect("read checkpoint");
    let mid = bytes.len() / 2;
    bytes[mid] ^= 1;
    std::fs::write(&path, &bytes).expect("write checkpoint");
    let rejected = matches!(load_checkpoint(&path), Err(Error::Corruption { .. }));
    outcome(bitwise && rejected, format!("bitwise={bitwise} corruption_rejected={rejected}"))
}

type Criterion = (usize, &'static str, u64, fn() -> Result<Outcome>);

const CRITERIA: [Criterion; 10] = [
    (1, "complexity_arithmetic", 1, complexity),
    (2, "conv_expansion_oracle", 10, oracle),
    (3, "gradient_checks", 60, gradients),
    (4, "invariance_suite", 60, invariances),
    (5, "length_generalization", 10, length_generalization),
    (6, "zero_padding_leakage", 120, leakage),
    (7, "sinusoid_fidelity", 5, sinusoid),
    (8, "masked_peg", 5, masked_peg),
    (9, "training_ordering", 45 * 60, training_ordering),
    (10, "checkpoint_round_trip", 5, checkpoint),
];

#[test]
fn acceptance() {
    let mut failed = Vec::new();
    for (id, name, budget, run) in CRITERIA {
        let start = Instant::now();
        let result = run();
        let secs = start.elapsed().as_secs_f64();
        let in_time = secs <= budget as f64;
        let (passed, detail) = match result {
            Ok(o) => (o.passed && in_time, o.detail),
            Err(e) => (false, format!("error: {e}")),
        };
        println!(
            "criterion {id:>2} {name:<24} {} time={secs:.2}s budget={budget}s {detail}",
            if passed { "PASS" } else { "FAIL" }
        );
        if !passed {
            failed.push(id);
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
