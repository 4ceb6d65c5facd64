//! Seeded, platform-independent random numbers.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::tensor::{Scalar, Tensor};

/// ChaCha8-backed generator. The same seed yields the same stream everywhere.
#[derive(Clone, Debug)]
pub struct SeededRng {
    seed: u64,
    inner: ChaCha8Rng,
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        Self { seed, inner: ChaCha8Rng::seed_from_u64(seed) }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Independent stream derived from this generator's seed and a label.
    pub fn fork(&self, stream: u64) -> SeededRng {
        let mixed = self
            .seed
            .wrapping_mul(0x9E37_79B9_7F4A_7C15)
            .wrapping_add(stream.wrapping_mul(0xD1B5_4A32_D192_ED03))
            ^ 0x94D0_49BB_1331_11EB;
        SeededRng::new(mixed)
    }

    pub fn uniform(&mut self, lo: Scalar, hi: Scalar) -> Scalar {
        let u: f64 = self.inner.random();
        lo + (hi - lo) * u as Scalar
    }

    pub fn normal(&mut self) -> Scalar {
        let z: f64 = StandardNormal.sample(&mut self.inner);
        z as Scalar
    }

    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    pub fn uniform_tensor(&mut self, shape: &[usize], lo: Scalar, hi: Scalar) -> Tensor {
        let n = shape.iter().product();
        let data = (0..n).map(|_| self.uniform(lo, hi)).collect();
        Tensor::new(shape, data).expect("shape product matches")
    }

    pub fn normal_tensor(&mut self, shape: &[usize], std: Scalar) -> Tensor {
        let n = shape.iter().product();
        let data = (0..n).map(|_| std * self.normal()).collect();
        Tensor::new(shape, data).expect("shape product matches")
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.inner.random_range(0..=i);
            items.swap(i, j);
        }
    }
}
