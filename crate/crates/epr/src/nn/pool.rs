use ndarray::{Array2, Array4};

/// Non-overlapping average pooling with a square window.
pub fn avg_pool2d(x: &Array4<f32>, window: usize) -> Array4<f32> {
    let (n, c, h, w) = x.dim();
    debug_assert!(h % window == 0 && w % window == 0);
    let ho = h / window;
    let wo = w / window;
    let mut y = Array4::zeros((n, c, ho, wo));
    let xs = x.as_slice().unwrap();
    let ys = y.as_slice_mut().unwrap();
    let inv = 1.0 / (window * window) as f32;
    for p in 0..n * c {
        let img = &xs[p * h * w..][..h * w];
        let out = &mut ys[p * ho * wo..][..ho * wo];
        for oi in 0..ho {
            for oj in 0..wo {
                let mut s = 0.0f32;
                for di in 0..window {
                    let row = (oi * window + di) * w + oj * window;
                    for dj in 0..window {
                        s += img[row + dj];
                    }
                }
                out[oi * wo + oj] = s * inv;
            }
        }
    }
    y
}

pub fn avg_pool2d_backward(dy: &Array4<f32>, window: usize) -> Array4<f32> {
    let (n, c, ho, wo) = dy.dim();
    let h = ho * window;
    let w = wo * window;
    let mut dx = Array4::zeros((n, c, h, w));
    let ds = dy.as_slice().unwrap();
    let dxs = dx.as_slice_mut().unwrap();
    let inv = 1.0 / (window * window) as f32;
    for p in 0..n * c {
        let g = &ds[p * ho * wo..][..ho * wo];
        let out = &mut dxs[p * h * w..][..h * w];
        for oi in 0..ho {
            for oj in 0..wo {
                let v = g[oi * wo + oj] * inv;
                for di in 0..window {
                    let row = (oi * window + di) * w + oj * window;
                    for dj in 0..window {
                        out[row + dj] = v;
                    }
                }
            }
        }
    }
    dx
}

/// Collapses each (H, W) plane to its mean: (N, C, H, W) -> (N, C).
pub fn global_avg_pool(x: &Array4<f32>) -> Array2<f32> {
    let (n, c, h, w) = x.dim();
    let mut y = Array2::zeros((n, c));
    let inv = 1.0 / (h * w) as f32;
    for bi in 0..n {
        for ci in 0..c {
            y[[bi, ci]] = x
                .index_axis(ndarray::Axis(0), bi)
                .index_axis(ndarray::Axis(0), ci)
                .sum()
                * inv;
        }
    }
    y
}

pub fn global_avg_pool_backward(dy: &Array2<f32>, h: usize, w: usize) -> Array4<f32> {
    let (n, c) = dy.dim();
    let mut dx = Array4::zeros((n, c, h, w));
    let inv = 1.0 / (h * w) as f32;
    for bi in 0..n {
        for ci in 0..c {
            let v = dy[[bi, ci]] * inv;
            dx.index_axis_mut(ndarray::Axis(0), bi)
                .index_axis_mut(ndarray::Axis(0), ci)
                .fill(v);
        }
    }
    dx
}
