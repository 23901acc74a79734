//! Class-discriminative saliency: pooled score gradients weight the capture
//! layer's feature maps, the clamped combination is upsampled to image size.

use std::path::Path;

use ndarray::{Array1, Array2, Array3};
use serde::Serialize;

use crate::imgio::save_gray_png;
use crate::model::{MultiHeadModel, TargetCapture};
use crate::{Error, Result};

/// Non-negative per-pixel relevance of an image for one class score.
#[derive(Debug, Clone)]
pub struct SaliencyMap {
    /// (side, side); indexed [row, col].
    pub values: Array2<f32>,
    /// Head-unit index the map explains.
    pub source_class: usize,
    pub source_task: usize,
}

/// Per-map importance: the mean of each map's gradient plane.
pub fn importance_weights(capture: &TargetCapture) -> Array1<f32> {
    let (m, u, v) = capture.gradients.dim();
    debug_assert_eq!(capture.activations.dim(), (m, u, v));
    let inv = 1.0 / (u * v) as f32;
    let mut alpha = Array1::zeros(m);
    for (mi, plane) in capture.gradients.outer_iter().enumerate() {
        alpha[mi] = plane.sum() * inv;
    }
    alpha
}

/// Weighted combination of activation maps, clamped at zero.
pub fn localization_map(alpha: &Array1<f32>, activations: &Array3<f32>) -> Array2<f32> {
    let (m, u, v) = activations.dim();
    debug_assert_eq!(alpha.len(), m);
    let mut map = Array2::<f32>::zeros((u, v));
    for (mi, plane) in activations.outer_iter().enumerate() {
        let a = alpha[mi];
        map.zip_mut_with(&plane, |acc, &p| *acc += a * p);
    }
    map.mapv_inplace(|x| x.max(0.0));
    map
}

/// Bilinear upsampling with half-pixel centers: output pixel i samples source
/// coordinate (i + 0.5)·(in/out) − 0.5, clamped to the valid range. Constant
/// maps stay constant and output values never leave [min, max] of the input.
pub fn upsample_bilinear(map: &Array2<f32>, out_h: usize, out_w: usize) -> Array2<f32> {
    let (in_h, in_w) = map.dim();
    debug_assert!(in_h >= 1 && in_w >= 1 && out_h >= 1 && out_w >= 1);
    let coords = |out_n: usize, in_n: usize| -> Vec<(usize, usize, f32)> {
        let scale = in_n as f32 / out_n as f32;
        (0..out_n)
            .map(|o| {
                let src = ((o as f32 + 0.5) * scale - 0.5).clamp(0.0, (in_n - 1) as f32);
                let lo = src.floor() as usize;
                let hi = (lo + 1).min(in_n - 1);
                (lo, hi, src - lo as f32)
            })
            .collect()
    };
    let rows = coords(out_h, in_h);
    let cols = coords(out_w, in_w);
    let mut out = Array2::zeros((out_h, out_w));
    for (oi, &(r0, r1, fr)) in rows.iter().enumerate() {
        for (oj, &(c0, c1, fc)) in cols.iter().enumerate() {
            let top = map[[r0, c0]] * (1.0 - fc) + map[[r0, c1]] * fc;
            let bottom = map[[r1, c0]] * (1.0 - fc) + map[[r1, c1]] * fc;
            out[[oi, oj]] = top * (1.0 - fr) + bottom * fr;
        }
    }
    out
}

/// Full pipeline: capture at the model's target layer for (image, class),
/// weight, combine, clamp, and upsample to the image's resolution.
pub fn generate_saliency(
    model: &MultiHeadModel,
    image: &Array3<f32>,
    class_unit: usize,
    task_id: usize,
) -> Result<SaliencyMap> {
    let capture = model.capture_target_layer(image, class_unit, task_id)?;
    let alpha = importance_weights(&capture);
    let coarse = localization_map(&alpha, &capture.activations);
    let side = image.dim().1;
    let values = upsample_bilinear(&coarse, side, side);
    Ok(SaliencyMap {
        values,
        source_class: class_unit,
        source_task: task_id,
    })
}

#[derive(Serialize)]
struct DumpRecord {
    class: usize,
    task: usize,
    min: f32,
    max: f32,
}

/// Writes a grayscale heatmap PNG plus a JSON sidecar with class, task, and
/// value range.
pub fn dump_saliency(map: &SaliencyMap, png_path: &Path) -> Result<()> {
    save_gray_png(&map.values.view(), png_path)?;
    let record = DumpRecord {
        class: map.source_class,
        task: map.source_task,
        min: map.values.iter().cloned().fold(f32::INFINITY, f32::min),
        max: map.values.iter().cloned().fold(f32::NEG_INFINITY, f32::max),
    };
    let json_path = png_path.with_extension("json");
    std::fs::write(&json_path, serde_json::to_string_pretty(&record)?)
        .map_err(|e| Error::io(&json_path, e))
}
