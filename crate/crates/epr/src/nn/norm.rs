use ndarray::{Array1, Array4};

/// Per-channel batch normalization over (N, H, W).
///
/// Training mode normalizes with batch statistics and tracks running
/// estimates; eval mode normalizes with the running estimates.
#[derive(Debug, Clone)]
pub struct BatchNorm2d {
    pub gamma: Array1<f32>,
    pub beta: Array1<f32>,
    pub running_mean: Array1<f32>,
    pub running_var: Array1<f32>,
    pub eps: f32,
    pub momentum: f32,
}

pub struct BnCache {
    xhat: Array4<f32>,
    inv_std: Array1<f32>,
}

pub struct BnGrads {
    pub dgamma: Array1<f32>,
    pub dbeta: Array1<f32>,
}

impl BatchNorm2d {
    pub fn new(channels: usize) -> Self {
        BatchNorm2d {
            gamma: Array1::ones(channels),
            beta: Array1::zeros(channels),
            running_mean: Array1::zeros(channels),
            running_var: Array1::ones(channels),
            eps: 1e-5,
            momentum: 0.1,
        }
    }

    pub fn forward_train(&mut self, x: &Array4<f32>) -> (Array4<f32>, BnCache) {
        let (n, c, h, w) = x.dim();
        let m = (n * h * w) as f32;
        let mut y = Array4::zeros((n, c, h, w));
        let mut xhat = Array4::zeros((n, c, h, w));
        let mut inv_std = Array1::zeros(c);
        let xs = x.as_slice().unwrap();
        let ys = y.as_slice_mut().unwrap();
        let xh = xhat.as_slice_mut().unwrap();
        let hw = h * w;
        for ci in 0..c {
            let mut sum = 0.0f32;
            let mut sq = 0.0f32;
            for bi in 0..n {
                for &v in &xs[(bi * c + ci) * hw..][..hw] {
                    sum += v;
                    sq += v * v;
                }
            }
            let mean = sum / m;
            let var = (sq / m - mean * mean).max(0.0);
            let istd = 1.0 / (var + self.eps).sqrt();
            inv_std[ci] = istd;
            let g = self.gamma[ci];
            let b = self.beta[ci];
            for bi in 0..n {
                let base = (bi * c + ci) * hw;
                for off in 0..hw {
                    let norm = (xs[base + off] - mean) * istd;
                    xh[base + off] = norm;
                    ys[base + off] = g * norm + b;
                }
            }
            // Unbiased variance for the running estimate, as is conventional.
            let unbiased = if m > 1.0 { var * m / (m - 1.0) } else { var };
            self.running_mean[ci] = (1.0 - self.momentum) * self.running_mean[ci] + self.momentum * mean;
            self.running_var[ci] = (1.0 - self.momentum) * self.running_var[ci] + self.momentum * unbiased;
        }
        (y, BnCache { xhat, inv_std })
    }

    pub fn forward_eval(&self, x: &Array4<f32>) -> Array4<f32> {
        let (n, c, h, w) = x.dim();
        let mut y = x.clone();
        let ys = y.as_slice_mut().unwrap();
        let hw = h * w;
        for ci in 0..c {
            let istd = 1.0 / (self.running_var[ci] + self.eps).sqrt();
            let scale = self.gamma[ci] * istd;
            let shift = self.beta[ci] - self.running_mean[ci] * scale;
            for bi in 0..n {
                for v in &mut ys[(bi * c + ci) * hw..][..hw] {
                    *v = *v * scale + shift;
                }
            }
        }
        y
    }

    pub fn backward(&self, cache: &BnCache, dy: &Array4<f32>) -> (Array4<f32>, BnGrads) {
        let (n, c, h, w) = dy.dim();
        let m = (n * h * w) as f32;
        let mut dx = Array4::zeros((n, c, h, w));
        let mut dgamma = Array1::zeros(c);
        let mut dbeta = Array1::zeros(c);
        let dys = dy.as_slice().unwrap();
        let xh = cache.xhat.as_slice().unwrap();
        let dxs = dx.as_slice_mut().unwrap();
        let hw = h * w;
        for ci in 0..c {
            let mut sum_dy = 0.0f32;
            let mut sum_dy_xhat = 0.0f32;
            for bi in 0..n {
                let base = (bi * c + ci) * hw;
                for off in 0..hw {
                    sum_dy += dys[base + off];
                    sum_dy_xhat += dys[base + off] * xh[base + off];
                }
            }
            dgamma[ci] = sum_dy_xhat;
            dbeta[ci] = sum_dy;
            let g = self.gamma[ci];
            let istd = cache.inv_std[ci];
            for bi in 0..n {
                let base = (bi * c + ci) * hw;
                for off in 0..hw {
                    dxs[base + off] = g * istd / m
                        * (m * dys[base + off] - sum_dy - xh[base + off] * sum_dy_xhat);
                }
            }
        }
        (dx, BnGrads { dgamma, dbeta })
    }

    /// Input gradient in eval mode: the layer is affine per channel.
    pub fn backward_eval(&self, dy: &Array4<f32>) -> Array4<f32> {
        let (n, c, h, w) = dy.dim();
        let mut dx = dy.clone();
        let dxs = dx.as_slice_mut().unwrap();
        let hw = h * w;
        for ci in 0..c {
            let scale = self.gamma[ci] / (self.running_var[ci] + self.eps).sqrt();
            for bi in 0..n {
                for v in &mut dxs[(bi * c + ci) * hw..][..hw] {
                    *v *= scale;
                }
            }
        }
        dx
    }

    pub fn apply_sgd(&mut self, grads: &BnGrads, lr: f32) {
        self.gamma.scaled_add(-lr, &grads.dgamma);
        self.beta.scaled_add(-lr, &grads.dbeta);
    }

    pub fn param_count(&self) -> usize {
        self.gamma.len() + self.beta.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::fill_uniform;
    use crate::rng::stream;
    use approx::assert_relative_eq;

    #[test]
    fn train_output_is_normalized() {
        let mut rng = stream(7, "bn-test");
        let mut bn = BatchNorm2d::new(3);
        let mut x = Array4::zeros((4, 3, 5, 5));
        fill_uniform(x.as_slice_mut().unwrap(), 2.0, &mut rng);
        let (y, _) = bn.forward_train(&x);
        for ci in 0..3 {
            let ch = y.index_axis(ndarray::Axis(1), ci);
            let m = ch.len() as f32;
            let mean = ch.sum() / m;
            let var = ch.mapv(|v| (v - mean) * (v - mean)).sum() / m;
            assert_relative_eq!(mean, 0.0, epsilon = 1e-4);
            assert_relative_eq!(var, 1.0, epsilon = 1e-3);
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = stream(9, "bn-fd");
        let mut bn = BatchNorm2d::new(2);
        fill_uniform(bn.gamma.as_slice_mut().unwrap(), 0.5, &mut rng);
        bn.gamma.mapv_inplace(|v| v + 1.0);
        fill_uniform(bn.beta.as_slice_mut().unwrap(), 0.5, &mut rng);
        let mut x = Array4::zeros((2, 2, 3, 3));
        fill_uniform(x.as_slice_mut().unwrap(), 1.0, &mut rng);
        let mut g = Array4::zeros((2, 2, 3, 3));
        fill_uniform(g.as_slice_mut().unwrap(), 1.0, &mut rng);

        // Loss = sum(g .* y) for a fixed random g, so dL/dy = g. A loss like
        // sum(y^2) would be nearly invariant to x (normalization cancels the
        // scale), leaving finite differences dominated by f32 rounding noise.
        // Clone per evaluation so running-stat updates never leak between
        // probes.
        let loss = |bn: &BatchNorm2d, x: &Array4<f32>| (bn.clone().forward_train(x).0 * &g).sum();
        let (_, cache) = bn.clone().forward_train(&x);
        let (dx, grads) = bn.backward(&cache, &g);

        let h = 1e-3;
        for &(bi, ci, i, j) in &[(0usize, 0usize, 0usize, 0usize), (1, 1, 2, 2), (0, 1, 1, 0)] {
            let orig = x[[bi, ci, i, j]];
            x[[bi, ci, i, j]] = orig + h;
            let up = loss(&bn, &x);
            x[[bi, ci, i, j]] = orig - h;
            let down = loss(&bn, &x);
            x[[bi, ci, i, j]] = orig;
            let fd = (up - down) / (2.0 * h);
            assert_relative_eq!(dx[[bi, ci, i, j]], fd, max_relative = 2e-2, epsilon = 1e-3);
        }
        for ci in 0..2 {
            let orig = bn.gamma[ci];
            bn.gamma[ci] = orig + h;
            let up = loss(&bn, &x);
            bn.gamma[ci] = orig - h;
            let down = loss(&bn, &x);
            bn.gamma[ci] = orig;
            let fd = (up - down) / (2.0 * h);
            assert_relative_eq!(grads.dgamma[ci], fd, max_relative = 2e-2, epsilon = 1e-3);
        }
    }

    #[test]
    fn eval_uses_running_statistics() {
        let mut bn = BatchNorm2d::new(1);
        bn.running_mean[0] = 2.0;
        bn.running_var[0] = 4.0;
        bn.gamma[0] = 3.0;
        bn.beta[0] = 1.0;
        let x = Array4::from_elem((1, 1, 1, 1), 4.0f32);
        let y = bn.forward_eval(&x);
        // (4 - 2) / sqrt(4 + eps) * 3 + 1 ≈ 4
        assert_relative_eq!(y[[0, 0, 0, 0]], 4.0, epsilon = 1e-4);
    }
}
