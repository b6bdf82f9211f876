//! Named, splittable random streams.
//!
//! Every stochastic consumer (weight init, data generation, probe inputs)
//! asks for a stream by name. A stream is a ChaCha8 generator keyed by the
//! root seed, with the ChaCha stream id derived from the name, so adding a
//! new consumer never perturbs the draws of an existing one.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::digest::fnv1a64;
use crate::tensor::{Float, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Seed(pub u64);

impl Seed {
    pub fn stream(self, name: &str) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.0);
        rng.set_stream(fnv1a64(name.as_bytes()));
        rng
    }

    /// Derives an independent seed for a named sub-component.
    pub fn child(self, name: &str) -> Seed {
        let mut bytes = self.0.to_le_bytes().to_vec();
        bytes.extend_from_slice(name.as_bytes());
        Seed(fnv1a64(&bytes))
    }

    pub fn child_indexed(self, name: &str, index: usize) -> Seed {
        self.child(&format!("{name}#{index}"))
    }
}

/// Normal(0, std) truncated to ±2 std by rejection.
pub fn trunc_normal(rng: &mut impl Rng, std: f64) -> f64 {
    loop {
        let z: f64 = StandardNormal.sample(rng);
        if z.abs() <= 2.0 {
            return z * std;
        }
    }
}

pub fn normal(rng: &mut impl Rng, std: f64) -> f64 {
    let z: f64 = StandardNormal.sample(rng);
    z * std
}

pub fn trunc_normal_tensor<T: Float>(rng: &mut impl Rng, shape: Vec<usize>, std: f64) -> Tensor<T> {
    Tensor::from_fn(shape, |_| T::of(trunc_normal(rng, std)))
}

pub fn normal_tensor<T: Float>(rng: &mut impl Rng, shape: Vec<usize>, std: f64) -> Tensor<T> {
    Tensor::from_fn(shape, |_| T::of(normal(rng, std)))
}

pub fn uniform_tensor<T: Float>(rng: &mut impl Rng, shape: Vec<usize>, lo: f64, hi: f64) -> Tensor<T> {
    Tensor::from_fn(shape, |_| T::of(rng.gen_range(lo..hi)))
}

/// Uniformly random permutation of `0..n` (Fisher–Yates).
pub fn permutation(rng: &mut impl Rng, n: usize) -> Vec<usize> {
    let mut p: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.gen_range(0..=i);
        p.swap(i, j);
    }
    p
}
