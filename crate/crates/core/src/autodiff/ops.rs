use std::rc::Rc;

use super::{ConvGeom, Op, Var};
use crate::error::{Error, Result};
use crate::nn::Padding;
use crate::tensor::{numel, permute_data, validate_axes, Float, Tensor};

/// Per-row column lookup used by gather/scatter along the last axis.
///
/// For a source whose trailing two extents are `[rows, src_cols]`, gather
/// produces `[rows, cols]` with `out[r, c] = src[r, index(r, c)]`, and a
/// `None` entry reads as zero.
#[derive(Clone, Debug, PartialEq)]
pub struct IndexMap {
    pub rows: usize,
    pub cols: usize,
    pub src_cols: usize,
    entries: Vec<Option<u32>>,
}

impl IndexMap {
    pub fn new(rows: usize, cols: usize, src_cols: usize, entries: Vec<Option<usize>>) -> Result<Self> {
        if entries.len() != rows * cols {
            return Err(Error::dim("index map", &[rows, cols], &[entries.len()]));
        }
        if let Some(bad) = entries.iter().flatten().find(|&&e| e >= src_cols) {
            return Err(Error::contract(format!(
                "index map entry {bad} out of range for {src_cols} source columns"
            )));
        }
        Ok(IndexMap {
            rows,
            cols,
            src_cols,
            entries: entries.into_iter().map(|e| e.map(|v| v as u32)).collect(),
        })
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> Option<usize> {
        self.entries[row * self.cols + col].map(|v| v as usize)
    }
}

fn check_same_tape<T: Float>(a: &Var<'_, T>, b: &Var<'_, T>) -> Result<()> {
    if std::ptr::eq(a.tape, b.tape) {
        Ok(())
    } else {
        Err(Error::contract("operands live on different tapes"))
    }
}

/// Splits `shape` around `axis` into (outer, axis extent, inner).
fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn elementwise<'t, T: Float>(
    a: Var<'t, T>,
    b: Var<'t, T>,
    name: &'static str,
    op: Op<T>,
    f: impl Fn(T, T) -> T,
) -> Result<Var<'t, T>> {
    check_same_tape(&a, &b)?;
    let (av, bv) = (a.value(), b.value());
    if av.shape() != bv.shape() {
        return Err(Error::dim(name, av.shape(), bv.shape()));
    }
    let out = av.zip_map(&bv, f)?;
    let rg = a.requires_grad() || b.requires_grad();
    Ok(a.tape.push(out, op, rg))
}

impl<'t, T: Float> Var<'t, T> {
    pub fn add(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        elementwise(self, other, "add", Op::Add(self.id, other.id), |x, y| x + y)
    }

    pub fn sub(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        elementwise(self, other, "sub", Op::Sub(self.id, other.id), |x, y| x - y)
    }

    pub fn mul(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        elementwise(self, other, "mul", Op::Mul(self.id, other.id), |x, y| x * y)
    }

    /// `self + b`, repeating `b` over the leading axes of `self`. The shape
    /// of `b` must equal a suffix of `self`'s shape (bias vectors, position
    /// tables).
    pub fn add_broadcast(self, b: Var<'t, T>) -> Result<Var<'t, T>> {
        check_same_tape(&self, &b)?;
        let (av, bv) = (self.value(), b.value());
        let (ash, bsh) = (av.shape(), bv.shape());
        if bsh.len() > ash.len() || ash[ash.len() - bsh.len()..] != *bsh {
            return Err(Error::dim("add_broadcast", ash, bsh));
        }
        let bd = bv.data();
        let period = bd.len().max(1);
        let data: Vec<T> = av
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| x + bd[i % period])
            .collect();
        let rg = self.requires_grad() || b.requires_grad();
        Ok(self.tape.push(
            Tensor::new(ash.to_vec(), data)?,
            Op::AddBroadcast(self.id, b.id),
            rg,
        ))
    }

    pub fn scale(self, s: f64) -> Var<'t, T> {
        let s = T::of(s);
        let out = self.value().map(|x| x * s);
        self.tape.push(out, Op::Scale(self.id, s), self.requires_grad())
    }

    /// Batched matrix product `[.., m, k] · [.., k, n] -> [.., m, n]`.
    ///
    /// Leading (batch) extents must agree, or one operand may be a plain
    /// matrix that is shared across the other's batch.
    pub fn matmul(self, b: Var<'t, T>) -> Result<Var<'t, T>> {
        check_same_tape(&self, &b)?;
        let (av, bv) = (self.value(), b.value());
        let (ash, bsh) = (av.shape(), bv.shape());
        if ash.len() < 2 || bsh.len() < 2 || ash[ash.len() - 1] != bsh[bsh.len() - 2] {
            return Err(Error::dim("matmul", ash, bsh));
        }
        let (m, k) = (ash[ash.len() - 2], ash[ash.len() - 1]);
        let n = bsh[bsh.len() - 1];
        let (abatch, bbatch) = (&ash[..ash.len() - 2], &bsh[..bsh.len() - 2]);
        let a_batched = !abatch.is_empty();
        let b_batched = !bbatch.is_empty();
        let batch_shape = match (a_batched, b_batched) {
            (true, true) if abatch == bbatch => abatch.to_vec(),
            (true, true) => return Err(Error::dim("matmul", ash, bsh)),
            (true, false) => abatch.to_vec(),
            (false, true) => bbatch.to_vec(),
            (false, false) => Vec::new(),
        };
        let batch = numel(&batch_shape);
        let mut out = vec![T::zero(); batch * m * n];
        if a_batched && !b_batched {
            T::gemm(batch * m, k, n, av.data(), (k, 1), bv.data(), (n, 1), &mut out, false);
        } else {
            for bi in 0..batch {
                let ao = if a_batched { bi * m * k } else { 0 };
                let bo = if b_batched { bi * k * n } else { 0 };
                T::gemm(
                    m,
                    k,
                    n,
                    &av.data()[ao..ao + m * k],
                    (k, 1),
                    &bv.data()[bo..bo + k * n],
                    (n, 1),
                    &mut out[bi * m * n..(bi + 1) * m * n],
                    false,
                );
            }
        }
        let mut shape = batch_shape;
        shape.extend([m, n]);
        let rg = self.requires_grad() || b.requires_grad();
        Ok(self.tape.push(
            Tensor::new(shape, out)?,
            Op::MatMul {
                a: self.id,
                b: b.id,
                batch,
                a_batched,
                b_batched,
                m,
                k,
                n,
            },
            rg,
        ))
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Var<'t, T>> {
        let out = self.value().reshape(shape.to_vec())?;
        Ok(self.tape.push(out, Op::Reshape(self.id), self.requires_grad()))
    }

    pub fn permute(self, axes: &[usize]) -> Result<Var<'t, T>> {
        let v = self.value();
        if !validate_axes(axes, v.rank()) {
            return Err(Error::dim("permute", v.shape(), axes));
        }
        let (data, shape) = permute_data(v.data(), v.shape(), axes);
        Ok(self.tape.push(
            Tensor::new(shape, data)?,
            Op::Permute(self.id, axes.to_vec()),
            self.requires_grad(),
        ))
    }

    /// Swaps the last two axes.
    pub fn transpose(self) -> Result<Var<'t, T>> {
        let r = self.value().rank();
        if r < 2 {
            return Err(Error::dim("transpose", &self.shape(), &[]));
        }
        let mut axes: Vec<usize> = (0..r).collect();
        axes.swap(r - 2, r - 1);
        self.permute(&axes)
    }

    /// Numerically stable softmax along `axis` (max-subtracted).
    pub fn softmax(self, axis: usize) -> Result<Var<'t, T>> {
        let v = self.value();
        if axis >= v.rank() {
            return Err(Error::dim("softmax", v.shape(), &[axis]));
        }
        let (outer, len, inner) = split_axis(v.shape(), axis);
        let out = softmax_data(v.data(), outer, len, inner);
        Ok(self.tape.push(
            Tensor::new(v.shape().to_vec(), out)?,
            Op::Softmax {
                x: self.id,
                outer,
                len,
                inner,
            },
            self.requires_grad(),
        ))
    }

    pub fn relu(self) -> Var<'t, T> {
        let out = self.value().map(|x| if x > T::zero() { x } else { T::zero() });
        self.tape.push(out, Op::Relu(self.id), self.requires_grad())
    }

    /// GELU, tanh approximation.
    pub fn gelu(self) -> Var<'t, T> {
        let out = self.value().map(|x| T::of(gelu(x.as_f64())));
        self.tape.push(out, Op::Gelu(self.id), self.requires_grad())
    }

    /// Normalizes over the last axis, then applies `gamma · x̂ + beta`.
    pub fn layer_norm(self, gamma: Var<'t, T>, beta: Var<'t, T>, eps: f64) -> Result<Var<'t, T>> {
        check_same_tape(&self, &gamma)?;
        check_same_tape(&self, &beta)?;
        let (xv, gv, bv) = (self.value(), gamma.value(), beta.value());
        let d = *xv.shape().last().ok_or_else(|| Error::dim("layer_norm", xv.shape(), &[]))?;
        if d == 0 || gv.shape() != [d] || bv.shape() != [d] {
            return Err(Error::dim("layer_norm", xv.shape(), gv.shape()));
        }
        let rows = xv.numel() / d;
        let mut out = Vec::with_capacity(xv.numel());
        let mut xhat = Vec::with_capacity(xv.numel());
        let mut rstd = Vec::with_capacity(rows);
        let (g, b) = (gv.data(), bv.data());
        let inv_d = T::one() / T::of(d as f64);
        for row in xv.data().chunks_exact(d) {
            let mean = row.iter().copied().sum::<T>() * inv_d;
            let var = row.iter().map(|&x| (x - mean) * (x - mean)).sum::<T>() * inv_d;
            let r = T::one() / (var + T::of(eps)).sqrt();
            rstd.push(r);
            for (j, &x) in row.iter().enumerate() {
                let h = (x - mean) * r;
                xhat.push(h);
                out.push(h * g[j] + b[j]);
            }
        }
        let rg = self.requires_grad() || gamma.requires_grad() || beta.requires_grad();
        Ok(self.tape.push(
            Tensor::new(xv.shape().to_vec(), out)?,
            Op::LayerNorm {
                x: self.id,
                gamma: gamma.id,
                beta: beta.id,
                xhat,
                rstd,
            },
            rg,
        ))
    }

    /// Depthwise 2-D cross-correlation on a channels-last grid
    /// `[B, H, W, C]` with a `[C, k, k]` kernel (one filter per channel).
    pub fn depthwise_conv(self, kernel: Var<'t, T>, padding: Padding) -> Result<Var<'t, T>> {
        check_same_tape(&self, &kernel)?;
        let (xv, kv) = (self.value(), kernel.value());
        let (xs, ks) = (xv.shape(), kv.shape());
        if xs.len() != 4 || ks.len() != 3 || ks[0] != xs[3] || ks[1] != ks[2] {
            return Err(Error::dim("depthwise_conv", xs, ks));
        }
        let k = ks[1];
        if k % 2 == 0 {
            return Err(Error::config("kernel", format!("kernel size must be odd, got {k}")));
        }
        let (batch, in_h, in_w, channels) = (xs[0], xs[1], xs[2], xs[3]);
        let (out_h, out_w) = match padding {
            Padding::Zero | Padding::Circular => (in_h, in_w),
            Padding::None => {
                if in_h < k || in_w < k {
                    return Err(Error::Input(format!(
                        "unpadded {k}x{k} convolution needs at least a {k}x{k} grid, got {in_h}x{in_w}"
                    )));
                }
                (in_h - k + 1, in_w - k + 1)
            }
        };
        let geom = ConvGeom {
            batch,
            in_h,
            in_w,
            out_h,
            out_w,
            channels,
            k,
            padding,
        };
        let out = depthwise_forward(xv.data(), kv.data(), &geom);
        let rg = self.requires_grad() || kernel.requires_grad();
        Ok(self.tape.push(
            Tensor::new(vec![batch, out_h, out_w, channels], out)?,
            Op::DepthwiseConv {
                x: self.id,
                kernel: kernel.id,
                geom,
            },
            rg,
        ))
    }

    pub fn slice(self, axis: usize, start: usize, len: usize) -> Result<Var<'t, T>> {
        let v = self.value();
        if axis >= v.rank() || start + len > v.shape()[axis] {
            return Err(Error::dim("slice", v.shape(), &[axis, start, len]));
        }
        let (outer, axis_len, inner) = split_axis(v.shape(), axis);
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * axis_len + start) * inner;
            out.extend_from_slice(&v.data()[base..base + len * inner]);
        }
        let mut shape = v.shape().to_vec();
        shape[axis] = len;
        Ok(self.tape.push(
            Tensor::new(shape, out)?,
            Op::Slice {
                x: self.id,
                outer,
                inner,
                axis_len,
                start,
                len,
            },
            self.requires_grad(),
        ))
    }

    /// Repeats a tensor whose leading extent is 1 `times` times along that axis.
    pub fn expand(self, times: usize) -> Result<Var<'t, T>> {
        let v = self.value();
        if v.rank() == 0 || v.shape()[0] != 1 {
            return Err(Error::dim("expand", v.shape(), &[times]));
        }
        let mut data = Vec::with_capacity(v.numel() * times);
        for _ in 0..times {
            data.extend_from_slice(v.data());
        }
        let mut shape = v.shape().to_vec();
        shape[0] = times;
        Ok(self.tape.push(
            Tensor::new(shape, data)?,
            Op::Expand { x: self.id, times },
            self.requires_grad(),
        ))
    }

    /// Mean along `axis`, which is removed from the shape.
    pub fn mean(self, axis: usize) -> Result<Var<'t, T>> {
        let v = self.value();
        if axis >= v.rank() || v.shape()[axis] == 0 {
            return Err(Error::dim("mean", v.shape(), &[axis]));
        }
        let (outer, len, inner) = split_axis(v.shape(), axis);
        let mut out = vec![T::zero(); outer * inner];
        let d = v.data();
        for o in 0..outer {
            let acc = &mut out[o * inner..(o + 1) * inner];
            for l in 0..len {
                let src = &d[(o * len + l) * inner..(o * len + l + 1) * inner];
                for (a, &s) in acc.iter_mut().zip(src) {
                    *a += s;
                }
            }
        }
        let inv = T::one() / T::of(len as f64);
        out.iter_mut().for_each(|x| *x *= inv);
        let mut shape = v.shape().to_vec();
        shape.remove(axis);
        Ok(self.tape.push(
            Tensor::new(shape, out)?,
            Op::Mean {
                x: self.id,
                outer,
                len,
                inner,
            },
            self.requires_grad(),
        ))
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(self) -> Var<'t, T> {
        let s = self.value().sum();
        self.tape.push(Tensor::scalar(s), Op::Sum(self.id), self.requires_grad())
    }

    /// Gather along the last axis: `[.., rows, src_cols] -> [.., rows, cols]`.
    pub fn gather_last(self, index: Rc<IndexMap>) -> Result<Var<'t, T>> {
        let v = self.value();
        let s = v.shape();
        if s.len() < 2 || s[s.len() - 2] != index.rows || s[s.len() - 1] != index.src_cols {
            return Err(Error::dim("gather_last", s, &[index.rows, index.src_cols]));
        }
        let groups = v.numel() / (index.rows * index.src_cols).max(1);
        let mut out = Vec::with_capacity(groups * index.rows * index.cols);
        for g in 0..groups {
            for r in 0..index.rows {
                let row = &v.data()[(g * index.rows + r) * index.src_cols..][..index.src_cols];
                for c in 0..index.cols {
                    out.push(index.get(r, c).map_or(T::zero(), |m| row[m]));
                }
            }
        }
        let mut shape = s.to_vec();
        *shape.last_mut().unwrap() = index.cols;
        Ok(self.tape.push(
            Tensor::new(shape, out)?,
            Op::Gather { x: self.id, index },
            self.requires_grad(),
        ))
    }

    /// Adjoint of [`Var::gather_last`]: `[.., rows, cols] -> [.., rows, src_cols]`,
    /// summing entries that map to the same source column.
    pub fn scatter_last(self, index: Rc<IndexMap>) -> Result<Var<'t, T>> {
        let v = self.value();
        let s = v.shape();
        if s.len() < 2 || s[s.len() - 2] != index.rows || s[s.len() - 1] != index.cols {
            return Err(Error::dim("scatter_last", s, &[index.rows, index.cols]));
        }
        let groups = v.numel() / (index.rows * index.cols).max(1);
        let mut out = vec![T::zero(); groups * index.rows * index.src_cols];
        for g in 0..groups {
            for r in 0..index.rows {
                let src = &v.data()[(g * index.rows + r) * index.cols..][..index.cols];
                let dst = &mut out[(g * index.rows + r) * index.src_cols..][..index.src_cols];
                for (c, &x) in src.iter().enumerate() {
                    if let Some(m) = index.get(r, c) {
                        dst[m] += x;
                    }
                }
            }
        }
        let mut shape = s.to_vec();
        *shape.last_mut().unwrap() = index.src_cols;
        Ok(self.tape.push(
            Tensor::new(shape, out)?,
            Op::Scatter { x: self.id, index },
            self.requires_grad(),
        ))
    }

    /// Mean softmax cross-entropy of `[B, K]` logits against class indices,
    /// with optional label smoothing.
    pub fn cross_entropy(self, targets: &[usize], smoothing: f64) -> Result<Var<'t, T>> {
        let v = self.value();
        let s = v.shape();
        if s.len() != 2 || s[0] != targets.len() || s[0] == 0 {
            return Err(Error::dim("cross_entropy", s, &[targets.len()]));
        }
        let classes = s[1];
        if let Some(&bad) = targets.iter().find(|&&t| t >= classes) {
            return Err(Error::Input(format!("target class {bad} out of range for {classes} classes")));
        }
        let probs = softmax_data(v.data(), s[0], classes, 1);
        let off = smoothing / classes as f64;
        let mut loss = 0.0;
        for (row, &t) in probs.chunks_exact(classes).zip(targets) {
            for (c, &p) in row.iter().enumerate() {
                let q = off + if c == t { 1.0 - smoothing } else { 0.0 };
                if q > 0.0 {
                    loss -= q * p.as_f64().max(f64::MIN_POSITIVE).ln();
                }
            }
        }
        loss /= s[0] as f64;
        Ok(self.tape.push(
            Tensor::scalar(T::of(loss)),
            Op::CrossEntropy {
                logits: self.id,
                probs,
                targets: targets.to_vec(),
                smoothing,
            },
            self.requires_grad(),
        ))
    }
}

/// Concatenates along `axis`; all other extents must agree.
pub fn concat<'t, T: Float>(parts: &[Var<'t, T>], axis: usize) -> Result<Var<'t, T>> {
    let first = parts.first().ok_or_else(|| Error::contract("concat of zero tensors"))?;
    let vals: Vec<_> = parts.iter().map(|p| p.value()).collect();
    let base = vals[0].shape().to_vec();
    if axis >= base.len() {
        return Err(Error::dim("concat", &base, &[axis]));
    }
    for (p, v) in parts.iter().zip(&vals) {
        check_same_tape(first, p)?;
        let s = v.shape();
        if s.len() != base.len() || s.iter().zip(&base).enumerate().any(|(i, (a, b))| i != axis && a != b) {
            return Err(Error::dim("concat", &base, s));
        }
    }
    let (outer, _, inner) = split_axis(&base, axis);
    let sizes: Vec<usize> = vals.iter().map(|v| v.shape()[axis]).collect();
    let total: usize = sizes.iter().sum();
    let mut out = Vec::with_capacity(outer * total * inner);
    for o in 0..outer {
        for (v, &len) in vals.iter().zip(&sizes) {
            out.extend_from_slice(&v.data()[o * len * inner..(o + 1) * len * inner]);
        }
    }
    let mut shape = base;
    shape[axis] = total;
    let rg = parts.iter().any(|p| p.requires_grad());
    Ok(first.tape.push(
        Tensor::new(shape, out)?,
        Op::Concat {
            inputs: parts.iter().map(|p| p.id).collect(),
            outer,
            inner,
            sizes,
        },
        rg,
    ))
}

/// Position-wise choice: where `mask[p]` is set the output takes `a`, else `b`.
/// `a` and `b` share a shape whose element count is `mask.len() · inner`.
pub fn select<'t, T: Float>(mask: Rc<Vec<bool>>, a: Var<'t, T>, b: Var<'t, T>) -> Result<Var<'t, T>> {
    check_same_tape(&a, &b)?;
    let (av, bv) = (a.value(), b.value());
    if av.shape() != bv.shape() || mask.is_empty() || av.numel() % mask.len() != 0 {
        return Err(Error::dim("select", av.shape(), bv.shape()));
    }
    let inner = av.numel() / mask.len();
    let mut out = Vec::with_capacity(av.numel());
    for (p, &m) in mask.iter().enumerate() {
        let src = if m { av.data() } else { bv.data() };
        out.extend_from_slice(&src[p * inner..(p + 1) * inner]);
    }
    let rg = a.requires_grad() || b.requires_grad();
    Ok(a.tape.push(
        Tensor::new(av.shape().to_vec(), out)?,
        Op::Select {
            mask,
            a: a.id,
            b: b.id,
            inner,
        },
        rg,
    ))
}

pub(crate) fn softmax_data<T: Float>(x: &[T], outer: usize, len: usize, inner: usize) -> Vec<T> {
    let mut out = vec![T::zero(); x.len()];
    for o in 0..outer {
        for i in 0..inner {
            let at = |l: usize| (o * len + l) * inner + i;
            let mut max = T::neg_infinity();
            for l in 0..len {
                max = max.max(x[at(l)]);
            }
            let mut total = T::zero();
            for l in 0..len {
                let e = (x[at(l)] - max).exp();
                out[at(l)] = e;
                total += e;
            }
            let inv = T::one() / total;
            for l in 0..len {
                out[at(l)] *= inv;
            }
        }
    }
    out
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

pub(crate) fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

pub(crate) fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + 0.044715 * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}

/// For each output coordinate along one axis and each kernel tap, the input
/// coordinate it reads (or `None` for a zero pad).
pub(crate) fn tap_sources(out_len: usize, in_len: usize, k: usize, padding: Padding) -> Vec<Option<usize>> {
    let r = (k / 2) as isize;
    let mut map = Vec::with_capacity(out_len * k);
    for o in 0..out_len {
        for t in 0..k {
            let src = match padding {
                Padding::None => Some(o + t),
                Padding::Zero => {
                    let s = o as isize + t as isize - r;
                    (0..in_len as isize).contains(&s).then_some(s as usize)
                }
                Padding::Circular => {
                    let s = (o as isize + t as isize - r).rem_euclid(in_len as isize);
                    Some(s as usize)
                }
            };
            map.push(src);
        }
    }
    map
}

/// Kernel `[C, k, k]` reordered to `[k, k, C]` so the channel loop is contiguous.
pub(crate) fn kernel_taps_last<T: Float>(kernel: &[T], channels: usize, k: usize) -> Vec<T> {
    let mut out = vec![T::zero(); kernel.len()];
    for c in 0..channels {
        for t in 0..k * k {
            out[t * channels + c] = kernel[c * k * k + t];
        }
    }
    out
}

pub(crate) fn depthwise_forward<T: Float>(x: &[T], kernel: &[T], g: &ConvGeom) -> Vec<T> {
    let (c, k) = (g.channels, g.k);
    let rows = tap_sources(g.out_h, g.in_h, k, g.padding);
    let cols = tap_sources(g.out_w, g.in_w, k, g.padding);
    let w = kernel_taps_last(kernel, c, k);
    let mut out = vec![T::zero(); g.batch * g.out_h * g.out_w * c];
    for b in 0..g.batch {
        for oy in 0..g.out_h {
            for ox in 0..g.out_w {
                let o = ((b * g.out_h + oy) * g.out_w + ox) * c;
                let acc = &mut out[o..o + c];
                for i in 0..k {
                    let Some(sy) = rows[oy * k + i] else { continue };
                    for j in 0..k {
                        let Some(sx) = cols[ox * k + j] else { continue };
                        let src = &x[((b * g.in_h + sy) * g.in_w + sx) * c..][..c];
                        let wt = &w[(i * k + j) * c..][..c];
                        for ((a, &s), &wv) in acc.iter_mut().zip(src).zip(wt) {
                            *a += s * wv;
                        }
                    }
                }
            }
        }
    }
    out
}
