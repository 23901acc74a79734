use ndarray::{Array1, Array2};
use rand_chacha::ChaCha8Rng;

use super::fill_uniform;

/// Fully-connected layer: y = x W^T + b.
#[derive(Debug, Clone)]
pub struct Linear {
    /// (out_features, in_features)
    pub weight: Array2<f32>,
    pub bias: Array1<f32>,
}

pub struct LinearGrads {
    pub dweight: Array2<f32>,
    pub dbias: Array1<f32>,
}

impl Linear {
    pub fn new(in_features: usize, out_features: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = 1.0 / (in_features as f32).sqrt();
        let mut weight = Array2::zeros((out_features, in_features));
        fill_uniform(weight.as_slice_mut().unwrap(), bound, rng);
        let mut bias = Array1::zeros(out_features);
        fill_uniform(bias.as_slice_mut().unwrap(), bound, rng);
        Linear { weight, bias }
    }

    pub fn forward(&self, x: &Array2<f32>) -> Array2<f32> {
        x.dot(&self.weight.t()) + &self.bias
    }

    /// Returns (dx, grads); `x` is the forward input.
    pub fn backward(&self, x: &Array2<f32>, dy: &Array2<f32>) -> (Array2<f32>, LinearGrads) {
        let dweight = dy.t().dot(x);
        let dbias = dy.sum_axis(ndarray::Axis(0));
        let dx = dy.dot(&self.weight);
        (dx, LinearGrads { dweight, dbias })
    }

    pub fn apply_sgd(&mut self, grads: &LinearGrads, lr: f32) {
        self.weight.scaled_add(-lr, &grads.dweight);
        self.bias.scaled_add(-lr, &grads.dbias);
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }
}
