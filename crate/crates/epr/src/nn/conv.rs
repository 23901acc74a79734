use ndarray::{Array1, Array2, Array4};
use rand_chacha::ChaCha8Rng;

use super::fill_uniform;

/// 2D convolution with square kernels, implemented as im2col + matmul.
#[derive(Debug, Clone)]
pub struct Conv2d {
    /// Weights flattened to (c_out, c_in * k * k).
    pub weight: Array2<f32>,
    pub bias: Array1<f32>,
    pub c_in: usize,
    pub c_out: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

pub struct ConvCache {
    cols: Array2<f32>,
    in_shape: (usize, usize, usize, usize),
}

pub struct ConvGrads {
    pub dweight: Array2<f32>,
    pub dbias: Array1<f32>,
}

impl Conv2d {
    pub fn new(
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let fan_in = c_in * kernel * kernel;
        // He-for-relu uniform bound; the conservative 1/sqrt(fan_in) leaves
        // deep stacks with vanishingly small activations and a long flat
        // start under plain SGD.
        let bound = (6.0 / fan_in as f32).sqrt();
        let mut weight = Array2::zeros((c_out, fan_in));
        fill_uniform(weight.as_slice_mut().unwrap(), bound, rng);
        let mut bias = Array1::zeros(c_out);
        fill_uniform(bias.as_slice_mut().unwrap(), 1.0 / (fan_in as f32).sqrt(), rng);
        Conv2d {
            weight,
            bias,
            c_in,
            c_out,
            kernel,
            stride,
            pad,
        }
    }

    pub fn out_side(&self, side: usize) -> usize {
        (side + 2 * self.pad - self.kernel) / self.stride + 1
    }

    pub fn forward(&self, x: &Array4<f32>) -> (Array4<f32>, ConvCache) {
        let (n, c, h, w) = x.dim();
        debug_assert_eq!(c, self.c_in);
        let ho = self.out_side(h);
        let wo = self.out_side(w);
        let cols = im2col(x, self.kernel, self.stride, self.pad, ho, wo);
        let y_mat = self.weight.dot(&cols);
        let mut y = Array4::zeros((n, self.c_out, ho, wo));
        {
            let y_slice = y.as_slice_mut().unwrap();
            let m = y_mat.as_standard_layout();
            let m_slice = m.as_slice().unwrap();
            let plane = ho * wo;
            for co in 0..self.c_out {
                let b = self.bias[co];
                for bi in 0..n {
                    let src = &m_slice[co * n * plane + bi * plane..][..plane];
                    let dst = &mut y_slice[bi * self.c_out * plane + co * plane..][..plane];
                    for (d, s) in dst.iter_mut().zip(src) {
                        *d = s + b;
                    }
                }
            }
        }
        (
            y,
            ConvCache {
                cols,
                in_shape: (n, c, h, w),
            },
        )
    }

    pub fn backward(&self, cache: &ConvCache, dy: &Array4<f32>) -> (Array4<f32>, ConvGrads) {
        let (n, _, h, w) = cache.in_shape;
        let (dn, dc, ho, wo) = dy.dim();
        debug_assert_eq!((dn, dc), (n, self.c_out));
        // Rearrange dy into the matmul layout (c_out, n * ho * wo).
        let mut dy_mat = Array2::zeros((self.c_out, n * ho * wo));
        {
            let src = dy.as_slice().unwrap();
            let dst = dy_mat.as_slice_mut().unwrap();
            let plane = ho * wo;
            for bi in 0..n {
                for co in 0..self.c_out {
                    let s = &src[bi * self.c_out * plane + co * plane..][..plane];
                    let d = &mut dst[co * n * plane + bi * plane..][..plane];
                    d.copy_from_slice(s);
                }
            }
        }
        let dweight = dy_mat.dot(&cache.cols.t());
        let dbias = dy_mat.sum_axis(ndarray::Axis(1));
        let dcols = self.weight.t().dot(&dy_mat);
        let dx = col2im(
            &dcols,
            cache.in_shape,
            self.kernel,
            self.stride,
            self.pad,
            ho,
            wo,
        );
        let _ = (h, w);
        (dx, ConvGrads { dweight, dbias })
    }

    pub fn apply_sgd(&mut self, grads: &ConvGrads, lr: f32) {
        self.weight.scaled_add(-lr, &grads.dweight);
        self.bias.scaled_add(-lr, &grads.dbias);
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }
}

/// Unfolds (n, c, h, w) into (c*k*k, n*ho*wo) patch columns.
fn im2col(
    x: &Array4<f32>,
    k: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
) -> Array2<f32> {
    let (n, c, h, w) = x.dim();
    let mut cols = Array2::zeros((c * k * k, n * ho * wo));
    let x_slice = x.as_slice().unwrap();
    let cols_slice = cols.as_slice_mut().unwrap();
    let row_len = n * ho * wo;
    for ci in 0..c {
        for ki in 0..k {
            for kj in 0..k {
                let row = (ci * k + ki) * k + kj;
                let out_row = &mut cols_slice[row * row_len..][..row_len];
                for bi in 0..n {
                    let img = &x_slice[(bi * c + ci) * h * w..][..h * w];
                    for oi in 0..ho {
                        let xi = (oi * stride + ki) as isize - pad as isize;
                        let base = bi * ho * wo + oi * wo;
                        if xi < 0 || xi >= h as isize {
                            continue;
                        }
                        let src_row = &img[xi as usize * w..][..w];
                        for oj in 0..wo {
                            let yj = (oj * stride + kj) as isize - pad as isize;
                            if yj >= 0 && yj < w as isize {
                                out_row[base + oj] = src_row[yj as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Scatter-adds (c*k*k, n*ho*wo) columns back into an input-shaped gradient.
fn col2im(
    dcols: &Array2<f32>,
    in_shape: (usize, usize, usize, usize),
    k: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
) -> Array4<f32> {
    let (n, c, h, w) = in_shape;
    let mut dx = Array4::zeros((n, c, h, w));
    let dx_slice = dx.as_slice_mut().unwrap();
    let d = dcols.as_standard_layout();
    let d_slice = d.as_slice().unwrap();
    let row_len = n * ho * wo;
    for ci in 0..c {
        for ki in 0..k {
            for kj in 0..k {
                let row = (ci * k + ki) * k + kj;
                let src_row = &d_slice[row * row_len..][..row_len];
                for bi in 0..n {
                    let img = &mut dx_slice[(bi * c + ci) * h * w..];
                    for oi in 0..ho {
                        let xi = (oi * stride + ki) as isize - pad as isize;
                        if xi < 0 || xi >= h as isize {
                            continue;
                        }
                        let base = bi * ho * wo + oi * wo;
                        for oj in 0..wo {
                            let yj = (oj * stride + kj) as isize - pad as isize;
                            if yj >= 0 && yj < w as isize {
                                img[xi as usize * w + yj as usize] += src_row[base + oj];
                            }
                        }
                    }
                }
            }
        }
    }
    dx
}
