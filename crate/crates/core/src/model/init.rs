use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Seeded weight initializer.
pub struct Init {
    rng: ChaCha8Rng,
}

impl Init {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Independent stream for sub-components (e.g. adapters) of one seed.
    pub fn stream(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Self { rng }
    }

    pub fn normal<T: Scalar>(&mut self, shape: &[usize], std: f64) -> Tensor<T> {
        let dist = Normal::new(0.0, std).expect("std is finite and non-negative");
        Tensor::from_fn(shape, |_| T::of(dist.sample(&mut self.rng)))
    }

    /// Normal with std `1/sqrt(fan_in)`.
    pub fn fan_in<T: Scalar>(&mut self, shape: &[usize], fan_in: usize) -> Tensor<T> {
        self.normal(shape, 1.0 / (fan_in as f64).sqrt())
    }
}

/// Sinusoidal position table `[len, d]`.
pub fn sinusoidal_positions<T: Scalar>(len: usize, d: usize) -> Tensor<T> {
    Tensor::from_fn(&[len, d], |idx| {
        let (t, i) = ((idx / d) as f64, idx % d);
        let freq = 10000f64.powf(-((i - i % 2) as f64) / d as f64);
        T::of(if i % 2 == 0 { (t * freq).sin() } else { (t * freq).cos() })
    })
}
