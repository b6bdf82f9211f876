use super::ops::{gelu_grad, kernel_taps_last, tap_sources};
use super::{Node, Op};
use crate::tensor::{permute_data, Float};

fn accumulate<T: Float>(pending: &mut [Option<Vec<T>>], id: usize, contrib: Vec<T>) {
    match &mut pending[id] {
        Some(acc) => {
            for (a, c) in acc.iter_mut().zip(contrib) {
                *a += c;
            }
        }
        slot @ None => *slot = Some(contrib),
    }
}

/// Pushes the gradient of node `id` (already fully accumulated) into its inputs.
pub(super) fn propagate<T: Float>(nodes: &[Node<T>], id: usize, g: &[T], pending: &mut [Option<Vec<T>>]) {
    let wants = |i: usize| nodes[i].requires_grad;
    let val = |i: usize| nodes[i].value.data();
    match &nodes[id].op {
        Op::Leaf => {}
        Op::Add(a, b) => {
            for &i in [a, b] {
                if wants(i) {
                    accumulate(pending, i, g.to_vec());
                }
            }
        }
        Op::Sub(a, b) => {
            if wants(*a) {
                accumulate(pending, *a, g.to_vec());
            }
            if wants(*b) {
                accumulate(pending, *b, g.iter().map(|&x| -x).collect());
            }
        }
        Op::Mul(a, b) => {
            if wants(*a) {
                accumulate(pending, *a, g.iter().zip(val(*b)).map(|(&x, &y)| x * y).collect());
            }
            if wants(*b) {
                accumulate(pending, *b, g.iter().zip(val(*a)).map(|(&x, &y)| x * y).collect());
            }
        }
        Op::AddBroadcast(a, b) => {
            if wants(*a) {
                accumulate(pending, *a, g.to_vec());
            }
            if wants(*b) {
                let period = val(*b).len().max(1);
                let mut gb = vec![T::zero(); period];
                for (i, &x) in g.iter().enumerate() {
                    gb[i % period] += x;
                }
                accumulate(pending, *b, gb);
            }
        }
        Op::Scale(x, s) => {
            if wants(*x) {
                accumulate(pending, *x, g.iter().map(|&v| v * *s).collect());
            }
        }
        &Op::MatMul {
            a,
            b,
            batch,
            a_batched,
            b_batched,
            m,
            k,
            n,
        } => {
            let (av, bv) = (val(a), val(b));
            if wants(a) {
                // dA = dC · Bᵀ
                let mut ga = vec![T::zero(); if a_batched { batch * m * k } else { m * k }];
                if a_batched && !b_batched {
                    T::gemm(batch * m, n, k, g, (n, 1), bv, (1, n), &mut ga, false);
                } else {
                    for bi in 0..batch {
                        let bo = if b_batched { bi * k * n } else { 0 };
                        let go = if a_batched { bi * m * k } else { 0 };
                        T::gemm(
                            m,
                            n,
                            k,
                            &g[bi * m * n..(bi + 1) * m * n],
                            (n, 1),
                            &bv[bo..bo + k * n],
                            (1, n),
                            &mut ga[go..go + m * k],
                            !a_batched,
                        );
                    }
                }
                accumulate(pending, a, ga);
            }
            if wants(b) {
                // dB = Aᵀ · dC
                let mut gb = vec![T::zero(); if b_batched { batch * k * n } else { k * n }];
                if a_batched && !b_batched {
                    T::gemm(k, batch * m, n, av, (1, k), g, (n, 1), &mut gb, false);
                } else {
                    for bi in 0..batch {
                        let ao = if a_batched { bi * m * k } else { 0 };
                        let go = if b_batched { bi * k * n } else { 0 };
                        T::gemm(
                            k,
                            m,
                            n,
                            &av[ao..ao + m * k],
                            (1, k),
                            &g[bi * m * n..(bi + 1) * m * n],
                            (n, 1),
                            &mut gb[go..go + k * n],
                            !b_batched,
                        );
                    }
                }
                accumulate(pending, b, gb);
            }
        }
        Op::Reshape(x) => {
            if wants(*x) {
                accumulate(pending, *x, g.to_vec());
            }
        }
        Op::Permute(x, axes) => {
            if wants(*x) {
                let out_shape = nodes[id].value.shape();
                let mut inverse = vec![0; axes.len()];
                for (i, &a) in axes.iter().enumerate() {
                    inverse[a] = i;
                }
                let (gx, _) = permute_data(g, out_shape, &inverse);
                accumulate(pending, *x, gx);
            }
        }
        &Op::Softmax { x, outer, len, inner } => {
            if wants(x) {
                let y = nodes[id].value.data();
                let mut gx = vec![T::zero(); y.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let at = |l: usize| (o * len + l) * inner + i;
                        let dot: T = (0..len).map(|l| g[at(l)] * y[at(l)]).sum();
                        for l in 0..len {
                            gx[at(l)] = y[at(l)] * (g[at(l)] - dot);
                        }
                    }
                }
                accumulate(pending, x, gx);
            }
        }
        Op::Relu(x) => {
            if wants(*x) {
                let gx = g
                    .iter()
                    .zip(val(*x))
                    .map(|(&gv, &xv)| if xv > T::zero() { gv } else { T::zero() })
                    .collect();
                accumulate(pending, *x, gx);
            }
        }
        Op::Gelu(x) => {
            if wants(*x) {
                let gx = g
                    .iter()
                    .zip(val(*x))
                    .map(|(&gv, &xv)| gv * T::of(gelu_grad(xv.as_f64())))
                    .collect();
                accumulate(pending, *x, gx);
            }
        }
        Op::LayerNorm {
            x,
            gamma,
            beta,
            xhat,
            rstd,
        } => {
            let gam = val(*gamma);
            let d = gam.len();
            if wants(*x) {
                let inv_d = T::one() / T::of(d as f64);
                let mut gx = Vec::with_capacity(g.len());
                for ((gr, hr), &r) in g.chunks_exact(d).zip(xhat.chunks_exact(d)).zip(rstd) {
                    let mut mean_gh = T::zero();
                    let mut mean_ghx = T::zero();
                    for j in 0..d {
                        let gh = gr[j] * gam[j];
                        mean_gh += gh;
                        mean_ghx += gh * hr[j];
                    }
                    mean_gh *= inv_d;
                    mean_ghx *= inv_d;
                    for j in 0..d {
                        gx.push(r * (gr[j] * gam[j] - mean_gh - hr[j] * mean_ghx));
                    }
                }
                accumulate(pending, *x, gx);
            }
            if wants(*gamma) {
                let mut gg = vec![T::zero(); d];
                for (gr, hr) in g.chunks_exact(d).zip(xhat.chunks_exact(d)) {
                    for j in 0..d {
                        gg[j] += gr[j] * hr[j];
                    }
                }
                accumulate(pending, *gamma, gg);
            }
            if wants(*beta) {
                let mut gb = vec![T::zero(); d];
                for gr in g.chunks_exact(d) {
                    for j in 0..d {
                        gb[j] += gr[j];
                    }
                }
                accumulate(pending, *beta, gb);
            }
        }
        Op::DepthwiseConv { x, kernel, geom } => {
            let (c, k) = (geom.channels, geom.k);
            let rows = tap_sources(geom.out_h, geom.in_h, k, geom.padding);
            let cols = tap_sources(geom.out_w, geom.in_w, k, geom.padding);
            let (xv, kv) = (val(*x), val(*kernel));
            let w = kernel_taps_last(kv, c, k);
            let mut gx = wants(*x).then(|| vec![T::zero(); xv.len()]);
            let mut gw_taps = wants(*kernel).then(|| vec![T::zero(); kv.len()]);
            for b in 0..geom.batch {
                for oy in 0..geom.out_h {
                    for ox in 0..geom.out_w {
                        let go = &g[((b * geom.out_h + oy) * geom.out_w + ox) * c..][..c];
                        for i in 0..k {
                            let Some(sy) = rows[oy * k + i] else { continue };
                            for j in 0..k {
                                let Some(sx) = cols[ox * k + j] else { continue };
                                let src = ((b * geom.in_h + sy) * geom.in_w + sx) * c;
                                let tap = (i * k + j) * c;
                                if let Some(gx) = gx.as_mut() {
                                    for ch in 0..c {
                                        gx[src + ch] += go[ch] * w[tap + ch];
                                    }
                                }
                                if let Some(gw) = gw_taps.as_mut() {
                                    for ch in 0..c {
                                        gw[tap + ch] += go[ch] * xv[src + ch];
                                    }
                                }
                            }
                        }
                    }
                }
            }
            if let Some(gx) = gx {
                accumulate(pending, *x, gx);
            }
            if let Some(taps) = gw_taps {
                let mut gw = vec![T::zero(); taps.len()];
                for ch in 0..c {
                    for t in 0..k * k {
                        gw[ch * k * k + t] = taps[t * c + ch];
                    }
                }
                accumulate(pending, *kernel, gw);
            }
        }
        Op::Concat {
            inputs,
            outer,
            inner,
            sizes,
        } => {
            let total: usize = sizes.iter().sum();
            let mut offset = 0;
            for (&inp, &len) in inputs.iter().zip(sizes) {
                if wants(inp) {
                    let mut gi = Vec::with_capacity(outer * len * inner);
                    for o in 0..*outer {
                        let base = (o * total + offset) * inner;
                        gi.extend_from_slice(&g[base..base + len * inner]);
                    }
                    accumulate(pending, inp, gi);
                }
                offset += len;
            }
        }
        &Op::Slice {
            x,
            outer,
            inner,
            axis_len,
            start,
            len,
        } => {
            if wants(x) {
                let mut gx = vec![T::zero(); outer * axis_len * inner];
                for o in 0..outer {
                    let dst = (o * axis_len + start) * inner;
                    gx[dst..dst + len * inner].copy_from_slice(&g[o * len * inner..(o + 1) * len * inner]);
                }
                accumulate(pending, x, gx);
            }
        }
        &Op::Expand { x, times } => {
            if wants(x) {
                let unit = g.len() / times;
                let mut gx = vec![T::zero(); unit];
                for chunk in g.chunks_exact(unit) {
                    for (a, &v) in gx.iter_mut().zip(chunk) {
                        *a += v;
                    }
                }
                accumulate(pending, x, gx);
            }
        }
        &Op::Mean { x, outer, len, inner } => {
            if wants(x) {
                let inv = T::one() / T::of(len as f64);
                let mut gx = Vec::with_capacity(outer * len * inner);
                for o in 0..outer {
                    let src = &g[o * inner..(o + 1) * inner];
                    for _ in 0..len {
                        gx.extend(src.iter().map(|&v| v * inv));
                    }
                }
                accumulate(pending, x, gx);
            }
        }
        Op::Sum(x) => {
            if wants(*x) {
                accumulate(pending, *x, vec![g[0]; val(*x).len()]);
            }
        }
        Op::Gather { x, index } => {
            if wants(*x) {
                let src_len = val(*x).len();
                let groups = src_len / (index.rows * index.src_cols).max(1);
                let mut gx = vec![T::zero(); src_len];
                for grp in 0..groups {
                    for r in 0..index.rows {
                        let go = &g[(grp * index.rows + r) * index.cols..][..index.cols];
                        let dst = &mut gx[(grp * index.rows + r) * index.src_cols..][..index.src_cols];
                        for (c, &v) in go.iter().enumerate() {
                            if let Some(m) = index.get(r, c) {
                                dst[m] += v;
                            }
                        }
                    }
                }
                accumulate(pending, *x, gx);
            }
        }
        Op::Scatter { x, index } => {
            if wants(*x) {
                let src_len = val(*x).len();
                let groups = src_len / (index.rows * index.cols).max(1);
                let mut gx = Vec::with_capacity(src_len);
                for grp in 0..groups {
                    for r in 0..index.rows {
                        let go = &g[(grp * index.rows + r) * index.src_cols..][..index.src_cols];
                        for c in 0..index.cols {
                            gx.push(index.get(r, c).map_or(T::zero(), |m| go[m]));
                        }
                    }
                }
                accumulate(pending, *x, gx);
            }
        }
        Op::CrossEntropy {
            logits,
            probs,
            targets,
            smoothing,
        } => {
            if wants(*logits) {
                let classes = probs.len() / targets.len();
                let scale = g[0] / T::of(targets.len() as f64);
                let off = smoothing / classes as f64;
                let mut gx = Vec::with_capacity(probs.len());
                for (row, &t) in probs.chunks_exact(classes).zip(targets) {
                    for (c, &p) in row.iter().enumerate() {
                        let q = off + if c == t { 1.0 - smoothing } else { 0.0 };
                        gx.push((p - T::of(q)) * scale);
                    }
                }
                accumulate(pending, *logits, gx);
            }
        }
        Op::Select { mask, a, b, inner } => {
            for (target, take_when) in [(*a, true), (*b, false)] {
                if wants(target) {
                    let mut gt = vec![T::zero(); g.len()];
                    for (p, &m) in mask.iter().enumerate() {
                        if m == take_when {
                            gt[p * inner..(p + 1) * inner].copy_from_slice(&g[p * inner..(p + 1) * inner]);
                        }
                    }
                    accumulate(pending, target, gt);
                }
            }
        }
    }
}
