//! Central finite-difference gradient checking (64-bit only).

use rand::Rng;

use super::{Tape, Var};
use crate::error::{Error, Result};
use crate::rng::Seed;
use crate::tensor::Tensor;

/// Floor on the denominator of the relative error.
const REL_FLOOR: f64 = 1e-8;

fn evaluate<F>(f: &F, inputs: &[Tensor<f64>]) -> Result<Tensor<f64>>
where
    F: for<'t> Fn(&'t Tape<f64>, &[Var<'t, f64>]) -> Result<Var<'t, f64>>,
{
    let tape = Tape::new();
    let vars: Vec<_> = inputs.iter().map(|x| tape.leaf(x.clone())).collect();
    let out = f(&tape, &vars)?;
    let v = out.value();
    Ok((*v).clone())
}

/// Central-difference estimate of `d(Σ_j w_j f_j)/dx` for input `which`.
pub fn numeric_gradient<F>(f: &F, inputs: &[Tensor<f64>], which: usize, weights: &[f64], eps: f64) -> Result<Tensor<f64>>
where
    F: for<'t> Fn(&'t Tape<f64>, &[Var<'t, f64>]) -> Result<Var<'t, f64>>,
{
    let mut work = inputs.to_vec();
    let n = inputs[which].numel();
    let mut grad = Vec::with_capacity(n);
    for i in 0..n {
        let orig = work[which].data()[i];
        let (hi, lo) = (orig + eps, orig - eps);
        work[which].data_mut()[i] = hi;
        let plus = evaluate(f, &work)?;
        work[which].data_mut()[i] = lo;
        let minus = evaluate(f, &work)?;
        work[which].data_mut()[i] = orig;
        // Differencing per output element keeps untouched outputs exactly zero.
        // Divide by the step actually taken after rounding.
        let h = hi - lo;
        let d: f64 = plus
            .data()
            .iter()
            .zip(minus.data())
            .zip(weights)
            .map(|((p, m), w)| w * ((p - m) / h))
            .sum();
        grad.push(d);
    }
    Tensor::new(inputs[which].shape().to_vec(), grad)
}

/// Compares reverse-mode gradients of `f` against central differences for
/// every coordinate of every input and returns the largest
/// `|analytic − numeric| / max(1e-8, |analytic| + |numeric|)`.
///
/// A tensor-valued `f` is reduced to a scalar with fixed pseudo-random
/// weights. Fails with [`Error::Determinism`] when two evaluations at the
/// same point disagree.
pub fn grad_check_many<F>(f: F, inputs: &[Tensor<f64>], eps: f64) -> Result<f64>
where
    F: for<'t> Fn(&'t Tape<f64>, &[Var<'t, f64>]) -> Result<Var<'t, f64>>,
{
    let first = evaluate(&f, inputs)?;
    let second = evaluate(&f, inputs)?;
    if first.data() != second.data() {
        return Err(Error::Determinism(first.max_abs_diff(&second)));
    }
    let mut rng = Seed(0x5eed_c4ec).stream("grad-check/projection");
    let weights: Vec<f64> = (0..first.numel())
        .map(|_| {
            let mag = rng.gen_range(0.5..1.5);
            if rng.gen::<bool>() {
                mag
            } else {
                -mag
            }
        })
        .collect();

    let tape = Tape::new();
    let vars: Vec<_> = inputs.iter().map(|x| tape.leaf(x.clone())).collect();
    let out = f(&tape, &vars)?;
    let proj = tape.constant(Tensor::new(out.shape(), weights.clone())?);
    let loss = out.mul(proj)?.sum();
    let grads = tape.backward(loss)?;

    let mut worst: f64 = 0.0;
    for (which, var) in vars.iter().enumerate() {
        let analytic = grads.wrt(*var);
        let numeric = numeric_gradient(&f, inputs, which, &weights, eps)?;
        for (a, n) in analytic.data().iter().zip(numeric.data()) {
            let err = (a - n).abs() / REL_FLOOR.max(a.abs() + n.abs());
            worst = worst.max(err);
        }
    }
    Ok(worst)
}

/// Single-input form of [`grad_check_many`].
pub fn grad_check<F>(f: F, x: &Tensor<f64>, eps: f64) -> Result<f64>
where
    F: for<'t> Fn(&'t Tape<f64>, Var<'t, f64>) -> Result<Var<'t, f64>>,
{
    grad_check_many(move |tape, xs| f(tape, xs[0]), std::slice::from_ref(x), eps)
}
