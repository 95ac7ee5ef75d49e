use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::tensor::{Shape, Tensor};

/// Seeded parameter source. Draws are consumed in construction order, so a
/// block tree built twice from the same seed is bit-identical.
#[derive(Debug, Clone)]
pub struct ParamInit {
    rng: ChaCha8Rng,
}

impl ParamInit {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Conv weight of shape `(out, in, k, k)` drawn from `U(-b, b)` with
    /// `b = 1 / sqrt(in * k * k)`.
    pub fn conv_weight(&mut self, out: usize, inp: usize, k: usize) -> Tensor {
        let bound = 1.0 / ((inp * k * k) as f64).sqrt();
        let shape = Shape::new(out, inp, k, k);
        let data = (0..shape.numel())
            .map(|_| self.rng.gen_range(-bound..bound))
            .collect();
        Tensor::from_vec(shape, data).expect("shape and buffer agree")
    }

    pub fn bias(&mut self, len: usize, fan_in: usize) -> Vec<f64> {
        let bound = 1.0 / (fan_in as f64).sqrt();
        (0..len)
            .map(|_| self.rng.gen_range(-bound..bound))
            .collect()
    }

    pub fn uniform(&mut self, shape: Shape, lo: f64, hi: f64) -> Tensor {
        let data = (0..shape.numel())
            .map(|_| self.rng.gen_range(lo..hi))
            .collect();
        Tensor::from_vec(shape, data).expect("shape and buffer agree")
    }
}
