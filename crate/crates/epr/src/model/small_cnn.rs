use ndarray::{Array2, Array3, Array4};
use rand_chacha::ChaCha8Rng;

use crate::nn::{
    avg_pool2d, avg_pool2d_backward, relu, relu_backward, Conv2d, ConvCache, ConvGrads,
};

/// Three conv blocks (16/32/64 maps) with 2×2 average pooling between them.
/// Small enough that a full continual run finishes in seconds on a CPU.
#[derive(Debug, Clone)]
pub struct SmallCnn {
    pub conv1: Conv2d,
    pub conv2: Conv2d,
    pub conv3: Conv2d,
    pub image_side: usize,
}

pub struct SmallCnnCache {
    c1: ConvCache,
    a1: Array4<f32>,
    c2: ConvCache,
    a2: Array4<f32>,
    c3: ConvCache,
    a3: Array4<f32>,
}

pub struct SmallCnnGrads {
    g1: ConvGrads,
    g2: ConvGrads,
    g3: ConvGrads,
}

pub const SMALL_CNN_TARGETS: &[&str] = &["conv3.relu", "conv2.relu"];

impl SmallCnn {
    pub fn new(channels: usize, image_side: usize, rng: &mut ChaCha8Rng) -> Self {
        SmallCnn {
            conv1: Conv2d::new(channels, 16, 3, 1, 1, rng),
            conv2: Conv2d::new(16, 32, 3, 1, 1, rng),
            conv3: Conv2d::new(32, 64, 3, 1, 1, rng),
            image_side,
        }
    }

    pub fn feature_dim(&self) -> usize {
        64 * (self.image_side / 8) * (self.image_side / 8)
    }

    pub fn forward_train(&self, x: &Array4<f32>) -> (Array2<f32>, SmallCnnCache) {
        let n = x.dim().0;
        let (z1, c1) = self.conv1.forward(x);
        let a1 = relu(&z1);
        let p1 = avg_pool2d(&a1, 2);
        let (z2, c2) = self.conv2.forward(&p1);
        let a2 = relu(&z2);
        let p2 = avg_pool2d(&a2, 2);
        let (z3, c3) = self.conv3.forward(&p2);
        let a3 = relu(&z3);
        let p3 = avg_pool2d(&a3, 2);
        let feat = p3
            .into_shape_with_order((n, self.feature_dim()))
            .expect("contiguous pool output");
        (feat, SmallCnnCache { c1, a1, c2, a2, c3, a3 })
    }

    pub fn forward_eval(&self, x: &Array4<f32>) -> Array2<f32> {
        self.forward_train(x).0
    }

    pub fn backward(&self, cache: &SmallCnnCache, dfeat: &Array2<f32>) -> SmallCnnGrads {
        let n = dfeat.dim().0;
        let s8 = self.image_side / 8;
        let dp3 = dfeat
            .to_owned()
            .into_shape_with_order((n, 64, s8, s8))
            .expect("contiguous gradient");
        let da3 = avg_pool2d_backward(&dp3, 2);
        let dz3 = relu_backward(&cache.a3, &da3);
        let (dp2, g3) = self.conv3.backward(&cache.c3, &dz3);
        let da2 = avg_pool2d_backward(&dp2, 2);
        let dz2 = relu_backward(&cache.a2, &da2);
        let (dp1, g2) = self.conv2.backward(&cache.c2, &dz2);
        let da1 = avg_pool2d_backward(&dp1, 2);
        let dz1 = relu_backward(&cache.a1, &da1);
        let (_, g1) = self.conv1.backward(&cache.c1, &dz1);
        SmallCnnGrads { g1, g2, g3 }
    }

    pub fn apply_sgd(&mut self, grads: &SmallCnnGrads, lr: f32) {
        self.conv1.apply_sgd(&grads.g1, lr);
        self.conv2.apply_sgd(&grads.g2, lr);
        self.conv3.apply_sgd(&grads.g3, lr);
    }

    /// Activations and d(score)/d(activations) at a named layer, for one
    /// image, with the score gradient w.r.t. the features given as `dfeat`.
    pub fn capture(
        &self,
        x: &Array4<f32>,
        dfeat: &Array2<f32>,
        target: &str,
    ) -> (Array3<f32>, Array3<f32>) {
        debug_assert_eq!(x.dim().0, 1);
        let (_, cache) = self.forward_train(x);
        let s8 = self.image_side / 8;
        let dp3 = dfeat
            .to_owned()
            .into_shape_with_order((1, 64, s8, s8))
            .expect("contiguous gradient");
        let da3 = avg_pool2d_backward(&dp3, 2);
        if target == "conv3.relu" {
            return single(&cache.a3, &da3);
        }
        let dz3 = relu_backward(&cache.a3, &da3);
        let (dp2, _) = self.conv3.backward(&cache.c3, &dz3);
        let da2 = avg_pool2d_backward(&dp2, 2);
        debug_assert_eq!(target, "conv2.relu");
        single(&cache.a2, &da2)
    }

    pub fn param_count(&self) -> usize {
        self.conv1.param_count() + self.conv2.param_count() + self.conv3.param_count()
    }
}

fn single(a: &Array4<f32>, g: &Array4<f32>) -> (Array3<f32>, Array3<f32>) {
    (
        a.index_axis(ndarray::Axis(0), 0).to_owned(),
        g.index_axis(ndarray::Axis(0), 0).to_owned(),
    )
}
