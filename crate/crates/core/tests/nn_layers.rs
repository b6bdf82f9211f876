use cpvt_core::autodiff::Tape;
use cpvt_core::grid::permute_tokens;
use cpvt_core::nn::{
    depthwise_conv2d, grad_check_module, separable_conv2d, Activation, Binder, BlockSpec, EncoderBlock, Ffn,
    KernelInit, Mhsa, NormPlacement, Padding, ParamStore, SeparableConv,
};
use cpvt_core::rng::{permutation, Seed};
use cpvt_core::Tensor;
use rand::Rng;

fn rand_tensor(seed: u64, shape: &[usize]) -> Tensor<f64> {
    let mut rng = Seed(seed).stream("test/input");
    Tensor::from_fn(shape.to_vec(), |_| rng.gen_range(-1.0..1.0))
}

/// Row-major `[d_in, d_out]` weight applied as `x·W + b`.
fn affine(x: &[f64], w: &Tensor<f64>, b: Option<&Tensor<f64>>) -> Vec<f64> {
    let (din, dout) = (w.shape()[0], w.shape()[1]);
    (0..dout)
        .map(|j| (0..din).map(|i| x[i] * w.data()[i * dout + j]).sum::<f64>() + b.map_or(0.0, |b| b.data()[j]))
        .collect()
}

fn mhsa_forward(store: &ParamStore<f64>, m: &Mhsa, x: &Tensor<f64>) -> (Tensor<f64>, Tensor<f64>) {
    let tape = Tape::new();
    let b = Binder::inference(&tape, store);
    let out = m.forward(&b, tape.constant(x.clone()), None).unwrap();
    let (o, s) = (out.output.value(), out.scores.value());
    ((*o).clone(), (*s).clone())
}

/// Loop implementation of multi-head attention for one sequence.
fn mhsa_reference(store: &ParamStore<f64>, m: &Mhsa, x: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let lin = |l: &cpvt_core::nn::Linear, v: &[f64]| affine(v, store.value(l.weight), l.bias.map(|id| store.value(id)));
    let q: Vec<_> = x.iter().map(|t| lin(&m.query, t)).collect();
    let k: Vec<_> = x.iter().map(|t| lin(&m.key, t)).collect();
    let v: Vec<_> = x.iter().map(|t| lin(&m.value, t)).collect();
    let (n, dk) = (x.len(), m.head_dim());
    let mut merged = vec![vec![0.0; m.dim]; n];
    for h in 0..m.heads {
        let r = h * dk..(h + 1) * dk;
        for i in 0..n {
            let logits: Vec<f64> = (0..n)
                .map(|j| q[i][r.clone()].iter().zip(&k[j][r.clone()]).map(|(a, b)| a * b).sum::<f64>() / (dk as f64).sqrt())
                .collect();
            let mx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = logits.iter().map(|l| (l - mx).exp()).collect();
            let z: f64 = e.iter().sum();
            for c in r.clone() {
                merged[i][c] = (0..n).map(|j| e[j] / z * v[j][c]).sum();
            }
        }
    }
    merged.iter().map(|t| lin(&m.out, t)).collect()
}

#[test]
fn mhsa_single_token_attends_to_itself() {
    let mut store = ParamStore::<f64>::new();
    let m = Mhsa::new(&mut store, "a", 6, 2, true, &mut Seed(1).stream("init")).unwrap();
    let x = rand_tensor(2, &[1, 1, 6]);
    let (out, scores) = mhsa_forward(&store, &m, &x);
    assert_eq!(scores.data(), &[1.0, 1.0]);
    let v = affine(x.data(), store.value(m.value.weight), m.value.bias.map(|b| store.value(b)));
    let expect = affine(&v, store.value(m.out.weight), m.out.bias.map(|b| store.value(b)));
    for (a, e) in out.data().iter().zip(&expect) {
        assert!((a - e).abs() < 1e-14);
    }
}

#[test]
fn mhsa_matches_loop_reference() {
    for (heads, seed) in [(1, 3), (3, 4)] {
        let mut store = ParamStore::<f64>::new();
        let m = Mhsa::new(&mut store, "a", 12, heads, true, &mut Seed(seed).stream("init")).unwrap();
        let x = rand_tensor(seed + 10, &[2, 5, 12]);
        let (out, _) = mhsa_forward(&store, &m, &x);
        for bi in 0..2 {
            let seq: Vec<Vec<f64>> = (0..5).map(|t| x.data()[(bi * 5 + t) * 12..(bi * 5 + t + 1) * 12].to_vec()).collect();
            let expect = mhsa_reference(&store, &m, &seq);
            for t in 0..5 {
                for c in 0..12 {
                    let got = out.data()[(bi * 5 + t) * 12 + c];
                    assert!((got - expect[t][c]).abs() < 1e-12, "heads={heads} {got} vs {}", expect[t][c]);
                }
            }
        }
    }
}

#[test]
fn mhsa_is_permutation_equivariant() {
    let mut store = ParamStore::<f64>::new();
    let m = Mhsa::new(&mut store, "a", 8, 2, true, &mut Seed(5).stream("init")).unwrap();
    let x = rand_tensor(6, &[1, 7, 8]);
    let mut rng = Seed(7).stream("perm");
    for _ in 0..5 {
        let p = permutation(&mut rng, 7);
        let (lhs, _) = mhsa_forward(&store, &m, &permute_tokens(&x, &p));
        let rhs = permute_tokens(&mhsa_forward(&store, &m, &x).0, &p);
        assert!(lhs.max_abs_diff(&rhs) < 1e-6);
    }
}

fn ffn_forward(store: &ParamStore<f64>, f: &Ffn, x: &Tensor<f64>) -> Tensor<f64> {
    let tape = Tape::new();
    let b = Binder::inference(&tape, store);
    let out = f.forward(&b, tape.constant(x.clone())).unwrap();
    let v = out.value();
    (*v).clone()
}

#[test]
fn ffn_relu_kill_leaves_output_bias() {
    let mut store = ParamStore::<f64>::new();
    let f = Ffn::new(&mut store, "f", 4, 8, Activation::Relu, &mut Seed(8).stream("init"));
    store.get_mut(f.fc1.weight).value = Tensor::zeros(vec![4, 8]);
    store.get_mut(f.fc1.bias.unwrap()).value = Tensor::full(vec![8], -1.0);
    let b2 = store.value(f.fc2.bias.unwrap()).clone();
    let b2 = Tensor::from_fn(vec![4], |i| 0.1 * i as f64 + b2.data()[i]);
    store.get_mut(f.fc2.bias.unwrap()).value = b2.clone();
    let out = ffn_forward(&store, &f, &rand_tensor(9, &[2, 3, 4]));
    for row in out.data().chunks(4) {
        assert_eq!(row, b2.data());
    }
}

#[test]
fn ffn_identity_weights_pass_positive_input() {
    let d = 5;
    let mut store = ParamStore::<f64>::new();
    let f = Ffn::new(&mut store, "f", d, d, Activation::Relu, &mut Seed(10).stream("init"));
    let eye = Tensor::from_fn(vec![d, d], |i| if i / d == i % d { 1.0 } else { 0.0 });
    for l in [&f.fc1, &f.fc2] {
        store.get_mut(l.weight).value = eye.clone();
        store.get_mut(l.bias.unwrap()).value = Tensor::zeros(vec![d]);
    }
    let x = rand_tensor(11, &[1, 4, d]).map(|v| v.abs() + 0.1);
    assert_eq!(ffn_forward(&store, &f, &x), x);
}

#[test]
fn ffn_matches_loop_reference() {
    for act in [Activation::Relu, Activation::Gelu] {
        let mut store = ParamStore::<f64>::new();
        let f = Ffn::new(&mut store, "f", 6, 10, act, &mut Seed(12).stream("init"));
        let x = rand_tensor(13, &[2, 3, 6]);
        let out = ffn_forward(&store, &f, &x);
        for (t, row) in x.data().chunks(6).enumerate() {
            let h: Vec<f64> = affine(row, store.value(f.fc1.weight), Some(store.value(f.fc1.bias.unwrap())))
                .into_iter()
                .map(|v| match act {
                    Activation::Relu => v.max(0.0),
                    Activation::Gelu => {
                        0.5 * v * (1.0 + ((2.0 / std::f64::consts::PI).sqrt() * (v + 0.044715 * v * v * v)).tanh())
                    }
                })
                .collect();
            let y = affine(&h, store.value(f.fc2.weight), Some(store.value(f.fc2.bias.unwrap())));
            for c in 0..6 {
                assert!((out.data()[t * 6 + c] - y[c]).abs() < 1e-12);
            }
        }
    }
}

fn conv(x: &Tensor<f64>, k: &Tensor<f64>, padding: Padding) -> Tensor<f64> {
    let tape = Tape::new();
    let out = depthwise_conv2d(tape.constant(x.clone()), tape.constant(k.clone()), padding).unwrap();
    let v = out.value();
    (*v).clone()
}

#[test]
fn depthwise_identity_kernel() {
    let x = rand_tensor(14, &[2, 3, 5, 4]);
    let k = Tensor::from_fn(vec![3, 3, 3], |i| if i % 9 == 4 { 1.0 } else { 0.0 });
    assert_eq!(conv(&x, &k, Padding::Zero), x);
    assert_eq!(conv(&x, &k, Padding::Circular), x);
}

#[test]
fn ones_kernel_on_ones_image_counts_cells() {
    let x = Tensor::ones(vec![1, 1, 3, 3]);
    let k = Tensor::ones(vec![1, 3, 3]);
    assert_eq!(conv(&x, &k, Padding::Zero).data(), &[4.0, 6.0, 4.0, 6.0, 9.0, 6.0, 4.0, 6.0, 4.0]);
    assert_eq!(conv(&x, &k, Padding::Circular).data(), &[9.0; 9]);
    assert_eq!(conv(&x, &k, Padding::None).data(), &[9.0]);
}

#[test]
fn depthwise_matches_direct_loop() {
    let (c, h, w, k) = (2, 5, 6, 3);
    let x = rand_tensor(15, &[1, c, h, w]);
    let ker = rand_tensor(16, &[c, k, k]);
    for padding in [Padding::Zero, Padding::Circular] {
        let out = conv(&x, &ker, padding);
        for ch in 0..c {
            for m in 0..h as isize {
                for n in 0..w as isize {
                    let mut acc = 0.0;
                    for i in 0..3isize {
                        for j in 0..3isize {
                            let (mut y, mut xx) = (m + i - 1, n + j - 1);
                            if padding == Padding::Circular {
                                y = y.rem_euclid(h as isize);
                                xx = xx.rem_euclid(w as isize);
                            } else if y < 0 || xx < 0 || y >= h as isize || xx >= w as isize {
                                continue;
                            }
                            acc += ker.at(&[ch, i as usize, j as usize]) * x.at(&[0, ch, y as usize, xx as usize]);
                        }
                    }
                    assert!((out.at(&[0, ch, m as usize, n as usize]) - acc).abs() < 1e-12);
                }
            }
        }
    }
}

#[test]
fn separable_with_identity_pointwise_is_depthwise() {
    let x = rand_tensor(17, &[1, 4, 5, 5]);
    let k = rand_tensor(18, &[4, 3, 3]);
    let eye = Tensor::from_fn(vec![4, 4], |i| if i / 4 == i % 4 { 1.0 } else { 0.0 });
    let tape = Tape::new();
    let sep = separable_conv2d(tape.constant(x.clone()), tape.constant(k.clone()), tape.constant(eye), Padding::Zero).unwrap();
    assert_eq!(*sep.value(), conv(&x, &k, Padding::Zero));
}

#[test]
fn separable_matches_composed_loop() {
    let (c, h, w) = (3, 4, 4);
    let x = rand_tensor(19, &[1, c, h, w]);
    let k = rand_tensor(20, &[c, 3, 3]);
    let pw = rand_tensor(21, &[c, c]);
    let tape = Tape::new();
    let sep = separable_conv2d(tape.constant(x.clone()), tape.constant(k.clone()), tape.constant(pw.clone()), Padding::Zero).unwrap();
    let dw = conv(&x, &k, Padding::Zero);
    for o in 0..c {
        for p in 0..h * w {
            let (m, n) = (p / w, p % w);
            let expect: f64 = (0..c).map(|i| dw.at(&[0, i, m, n]) * pw.at(&[i, o])).sum();
            assert!((sep.value().at(&[0, o, m, n]) - expect).abs() < 1e-12);
        }
    }
}

#[test]
fn separable_parameter_count() {
    let mut store = ParamStore::<f32>::new();
    let s = SeparableConv::new(&mut store, "s", 192, 3, Padding::Zero, KernelInit::TruncNormal, &mut Seed(0).stream("i")).unwrap();
    assert_eq!(s.num_params(), 192 * 192 + 9 * 192);
    assert_eq!(s.num_params(), 38592);
    assert_eq!(store.count(), 38592);
}

#[test]
fn even_kernel_is_config_error() {
    let mut store = ParamStore::<f32>::new();
    let r = SeparableConv::new(&mut store, "s", 4, 2, Padding::Zero, KernelInit::TruncNormal, &mut Seed(0).stream("i"));
    assert!(matches!(r, Err(cpvt_core::Error::Config { .. })));
}

#[test]
fn encoder_block_gradients_match_finite_differences() {
    for placement in [NormPlacement::Pre, NormPlacement::Post] {
        let mut store = ParamStore::<f64>::new();
        let spec = BlockSpec {
            dim: 4,
            heads: 2,
            hidden: 6,
            activation: Activation::Gelu,
            placement,
            qkv_bias: true,
        };
        let block = EncoderBlock::new(&mut store, "b", spec, &mut Seed(22).stream("init")).unwrap();
        let x = rand_tensor(23, &[1, 3, 4]);
        let err = grad_check_module(&store, &[x], |b, xs| Ok(block.forward(b, xs[0], None)?.output), 1e-5).unwrap();
        assert!(err <= 1e-4, "{placement:?}: {err}");
    }
}
