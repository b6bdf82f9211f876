use crate::tensor::Tensor;

/// Direct double-sum evaluation of a residual single-channel convolution
/// with zero padding:
///
/// `y[m, n] = x[m, n] + Σ_{i,j} w[i, j] · x[m + i − r, n + j − r]`, `r = (k−1)/2`,
///
/// where out-of-range reads are zero. `x` is `[1, 1, H, W]`, `w` is `[k, k]`.
pub fn conv_expansion_oracle(x: &Tensor<f64>, w: &Tensor<f64>, k: usize) -> Tensor<f64> {
    let s = x.shape();
    assert!(s.len() == 4 && s[0] == 1 && s[1] == 1, "oracle input must be [1, 1, H, W]");
    assert_eq!(w.shape(), &[k, k], "oracle kernel must be [k, k]");
    let (h, wd) = (s[2], s[3]);
    let r = (k / 2) as isize;
    let at = |m: isize, n: isize| -> f64 {
        if m < 0 || n < 0 || m >= h as isize || n >= wd as isize {
            0.0
        } else {
            x.data()[m as usize * wd + n as usize]
        }
    };
    let mut y = vec![0.0; h * wd];
    for m in 0..h as isize {
        for n in 0..wd as isize {
            let mut acc = 0.0;
            for i in 0..k as isize {
                for j in 0..k as isize {
                    acc += w.data()[(i * k as isize + j) as usize] * at(m + i - r, n + j - r);
                }
            }
            y[m as usize * wd + n as usize] = at(m, n) + acc;
        }
    }
    Tensor::new(vec![1, 1, h, wd], y).expect("shape matches")
}

/// Channel loop around [`conv_expansion_oracle`] for row-major grid tokens
/// `[B, H·W, C]` and a `[C, k, k]` kernel.
pub fn conv_expansion_oracle_tokens(tokens: &Tensor<f64>, kernel: &Tensor<f64>, grid: (usize, usize)) -> Tensor<f64> {
    let s = tokens.shape();
    let (b, n, c) = (s[0], s[1], s[2]);
    let (h, w) = grid;
    assert_eq!(n, h * w, "token count must equal the grid size");
    let k = kernel.shape()[1];
    let mut out = tokens.clone();
    for bi in 0..b {
        for ch in 0..c {
            let plane = Tensor::from_fn(vec![1, 1, h, w], |p| tokens.data()[(bi * n + p) * c + ch]);
            let wk = Tensor::from_fn(vec![k, k], |t| kernel.data()[ch * k * k + t]);
            let y = conv_expansion_oracle(&plane, &wk, k);
            for p in 0..n {
                out.data_mut()[(bi * n + p) * c + ch] = y.data()[p];
            }
        }
    }
    out
}
