//! Small PNG helpers shared by dataset export, saliency dumps, and
//! memory snapshots.

use std::path::Path;

use image::{GrayImage, RgbImage};
use ndarray::ArrayView2;

use crate::Result;

/// Converts a (3, h, w) float image in [0,1] to 8-bit RGB.
pub(crate) fn to_rgb8(image: &ndarray::ArrayView3<f32>) -> RgbImage {
    let (c, h, w) = image.dim();
    debug_assert_eq!(c, 3);
    let mut out = RgbImage::new(w as u32, h as u32);
    for i in 0..h {
        for j in 0..w {
            let px = out.get_pixel_mut(j as u32, i as u32);
            for ch in 0..3 {
                px.0[ch] = (image[[ch, i, j]].clamp(0.0, 1.0) * 255.0).round() as u8;
            }
        }
    }
    out
}

pub(crate) fn save_rgb_png(image: &ndarray::ArrayView3<f32>, path: &Path) -> Result<()> {
    to_rgb8(image)
        .save(path)
        .map_err(crate::Error::Image)
}

/// Saves a non-negative map as a grayscale PNG, normalized by its maximum.
pub(crate) fn save_gray_png(map: &ArrayView2<f32>, path: &Path) -> Result<()> {
    let (h, w) = map.dim();
    let max = map.iter().cloned().fold(0.0f32, f32::max);
    let scale = if max > 0.0 { 255.0 / max } else { 0.0 };
    let mut out = GrayImage::new(w as u32, h as u32);
    for i in 0..h {
        for j in 0..w {
            out.get_pixel_mut(j as u32, i as u32).0[0] =
                (map[[i, j]].max(0.0) * scale).round().min(255.0) as u8;
        }
    }
    out.save(path).map_err(crate::Error::Image)
}
