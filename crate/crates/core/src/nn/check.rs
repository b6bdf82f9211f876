//! Finite-difference checks for modules that read their weights from a
//! parameter store.

use rand::Rng;

use super::param::{Binder, ParamStore};
use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::rng::Seed;
use crate::tensor::Tensor;

const REL_FLOOR: f64 = 1e-8;

fn run<F>(f: &F, store: &ParamStore<f64>, inputs: &[Tensor<f64>]) -> Result<Tensor<f64>>
where
    F: for<'a> Fn(&Binder<'a, f64>, &[Var<'a, f64>]) -> Result<Var<'a, f64>>,
{
    let tape = Tape::new();
    let b = Binder::inference(&tape, store);
    let vars: Vec<_> = inputs.iter().map(|x| tape.constant(x.clone())).collect();
    let out = f(&b, &vars)?;
    let v = out.value();
    Ok((*v).clone())
}

/// Largest relative error between reverse-mode and central-difference
/// gradients of `f` with respect to every input and every trainable
/// parameter of `store`. The output is reduced to a scalar with fixed
/// pseudo-random weights.
pub fn grad_check_module<F>(store: &ParamStore<f64>, inputs: &[Tensor<f64>], f: F, eps: f64) -> Result<f64>
where
    F: for<'a> Fn(&Binder<'a, f64>, &[Var<'a, f64>]) -> Result<Var<'a, f64>>,
{
    let first = run(&f, store, inputs)?;
    if first.data() != run(&f, store, inputs)?.data() {
        return Err(Error::Determinism(first.max_abs_diff(&run(&f, store, inputs)?)));
    }
    let mut rng = Seed(0x5eed_c4ec).stream("grad-check/module");
    let weights: Vec<f64> = (0..first.numel())
        .map(|_| if rng.gen::<bool>() { 1.0 } else { -1.0 } * rng.gen_range(0.5..1.5))
        .collect();
    let project = |t: &Tensor<f64>| -> f64 { t.data().iter().zip(&weights).map(|(a, w)| a * w).sum() };

    let tape = Tape::new();
    let b = Binder::new(&tape, store);
    let vars: Vec<_> = inputs.iter().map(|x| tape.leaf(x.clone())).collect();
    let out = f(&b, &vars)?;
    let loss = out.mul(tape.constant(Tensor::new(out.shape(), weights.clone())?))?.sum();
    let grads = tape.backward(loss)?;
    let param_grads = b.grads(&grads);

    let mut worst: f64 = 0.0;
    let mut compare = |analytic: &[f64], numeric: &[f64]| {
        for (a, n) in analytic.iter().zip(numeric) {
            worst = worst.max((a - n).abs() / REL_FLOOR.max(a.abs() + n.abs()));
        }
    };

    let mut work = inputs.to_vec();
    for (which, var) in vars.iter().enumerate() {
        let mut numeric = Vec::with_capacity(work[which].numel());
        for i in 0..work[which].numel() {
            let orig = work[which].data()[i];
            let (hi, lo) = (orig + eps, orig - eps);
            work[which].data_mut()[i] = hi;
            let plus = project(&run(&f, store, &work)?);
            work[which].data_mut()[i] = lo;
            let minus = project(&run(&f, store, &work)?);
            work[which].data_mut()[i] = orig;
            numeric.push((plus - minus) / (hi - lo));
        }
        compare(grads.wrt(*var).data(), &numeric);
    }

    let mut probe = store.clone();
    let ids: Vec<_> = store.iter().filter(|(_, p)| p.trainable).map(|(id, _)| id).collect();
    for id in ids {
        let n = store.value(id).numel();
        let mut numeric = Vec::with_capacity(n);
        for i in 0..n {
            let orig = store.value(id).data()[i];
            let (hi, lo) = (orig + eps, orig - eps);
            probe.get_mut(id).value.data_mut()[i] = hi;
            let plus = project(&run(&f, &probe, inputs)?);
            probe.get_mut(id).value.data_mut()[i] = lo;
            let minus = project(&run(&f, &probe, inputs)?);
            probe.get_mut(id).value.data_mut()[i] = orig;
            numeric.push((plus - minus) / (hi - lo));
        }
        let analytic = param_grads[id.index()].clone().unwrap_or_else(|| Tensor::zeros(store.value(id).shape().to_vec()));
        compare(analytic.data(), &numeric);
    }
    Ok(worst)
}
