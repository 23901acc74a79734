//! Minimal CNN building blocks with explicit forward/backward passes.
//!
//! All arithmetic is f32 and single-threaded; given a fixed parameter state
//! and input, every pass is bit-reproducible. Layers own their parameters,
//! forward passes return the caches their backward passes need, and SGD is
//! applied per layer from the returned gradient structs.

mod conv;
mod linear;
mod loss;
mod norm;
mod pool;

pub use conv::{Conv2d, ConvCache, ConvGrads};
pub use linear::{Linear, LinearGrads};
pub use loss::softmax_cross_entropy;
pub use norm::{BatchNorm2d, BnCache, BnGrads};
pub use pool::{avg_pool2d, avg_pool2d_backward, global_avg_pool, global_avg_pool_backward};

use ndarray::Array4;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// ReLU, returning the activation (also the backward cache).
pub fn relu(x: &Array4<f32>) -> Array4<f32> {
    x.mapv(|v| v.max(0.0))
}

/// Backward through ReLU given the cached activation.
pub fn relu_backward(activated: &Array4<f32>, dy: &Array4<f32>) -> Array4<f32> {
    let mut dx = dy.clone();
    dx.zip_mut_with(activated, |d, &a| {
        if a <= 0.0 {
            *d = 0.0;
        }
    });
    dx
}

/// Fills a slice with U(-bound, bound) draws in index order.
pub(crate) fn fill_uniform(slice: &mut [f32], bound: f32, rng: &mut ChaCha8Rng) {
    for v in slice.iter_mut() {
        *v = rng.gen_range(-bound..bound);
    }
}
