//! Patch geometry and selection: sizing patches against a pixel budget,
//! locating the most salient window, ranking candidates by how the model
//! predicts them, and folding each task's staged examples into memory.

use ndarray::{s, Array3};

use crate::memory::{EpisodicMemory, RingBuffer};
use crate::model::MultiHeadModel;
use crate::saliency::{generate_saliency, SaliencyMap};
use crate::data::{Example, Task};
use crate::trainer::zero_pad;
use crate::{Error, Result};

/// Patch-packing knobs shared by the trainer and the memory updater.
#[derive(Debug, Clone, Copy)]
pub struct PackingConfig {
    /// Slot allowance per class, in units of full images.
    pub n_sc: f64,
    /// Examples packed per full-image slot (patches stored per class).
    pub epf: usize,
    /// Step between candidate patch positions.
    pub stride: usize,
    pub image_side: usize,
}

/// Where the true class landed in the model's ranking of a candidate patch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum PredictionTier {
    Correct,
    Top3,
    Other,
}

impl PredictionTier {
    pub fn name(self) -> &'static str {
        match self {
            PredictionTier::Correct => "correct",
            PredictionTier::Top3 => "top3",
            PredictionTier::Other => "other",
        }
    }
}

/// A stored patch: cropped pixels plus everything needed to replay it at its
/// original position and route it to the right head.
#[derive(Debug, Clone)]
pub struct MemoryPatch {
    /// (channels, side, side) crop in the original value range.
    pub pixels: Array3<f32>,
    pub task_id: usize,
    /// Global class label.
    pub label: usize,
    /// Within-task head unit for `label`.
    pub label_unit: usize,
    /// Top-left row of the crop in the source image.
    pub x_cord: usize,
    /// Top-left column of the crop in the source image.
    pub y_cord: usize,
    pub source_id: u64,
    pub tier: PredictionTier,
}

/// A patch proposed for storage; selection keeps the best-ranked ones.
pub type PatchCandidate = MemoryPatch;

/// Side length of a square patch such that `epf` patches fit the pixel
/// budget of `n_sc` full images: floor(sqrt(n_sc / epf) * w), nudged down if
/// floating point overshot the budget.
pub fn patch_width(n_sc: f64, epf: usize, w: usize) -> Result<usize> {
    if !(n_sc > 0.0) || epf == 0 || w == 0 {
        return Err(Error::Config(format!(
            "patch width undefined for n_sc={n_sc}, epf={epf}, w={w}"
        )));
    }
    let mut wp = ((n_sc / epf as f64).sqrt() * w as f64).floor() as usize;
    wp = wp.min(w);
    let budget = n_sc * (w * w) as f64;
    while wp > 0 && (wp * wp * epf) as f64 > budget {
        wp -= 1;
    }
    if wp == 0 {
        return Err(Error::Config(format!(
            "n_sc={n_sc} with epf={epf} leaves no room for a patch at w={w}"
        )));
    }
    Ok(wp)
}

/// Inverse of the sizing rule: how many patches of side `wp` fit the budget
/// of `n_sc` full images of side `w`.
pub fn epf_of(n_sc: f64, w: usize, wp: usize) -> Result<f64> {
    if !(n_sc > 0.0) || w == 0 || wp == 0 || wp > w {
        return Err(Error::Config(format!(
            "packing factor undefined for n_sc={n_sc}, w={w}, wp={wp}"
        )));
    }
    Ok(n_sc * (w * w) as f64 / (wp * wp) as f64)
}

fn axis_candidates(w: usize, wp: usize, stride: usize) -> Vec<usize> {
    let last = w - wp;
    let mut out: Vec<usize> = (0..=last).step_by(stride).collect();
    if *out.last().unwrap() != last {
        out.push(last);
    }
    out
}

/// Top-left corner (row, col) of the stride-aligned window with the largest
/// saliency mass. The final valid offset is always a candidate so the right
/// and bottom edges stay reachable; ties go to the smallest (row, col).
pub fn locate_salient_patch(
    map: &SaliencyMap,
    wp: usize,
    stride: usize,
) -> Result<(usize, usize)> {
    let (h, w) = map.values.dim();
    if wp == 0 || wp > h || wp > w {
        return Err(Error::Config(format!(
            "patch side {wp} does not fit a {h}x{w} map"
        )));
    }
    if stride == 0 {
        return Err(Error::Config("stride must be positive".into()));
    }
    let rows = axis_candidates(h, wp, stride);
    let cols = axis_candidates(w, wp, stride);
    let mut best = (rows[0], cols[0]);
    let mut best_sum = f64::NEG_INFINITY;
    for &x in &rows {
        for &y in &cols {
            let mut sum = 0.0f64;
            for r in x..x + wp {
                for c in y..y + wp {
                    sum += map.values[[r, c]] as f64;
                }
            }
            if sum > best_sum {
                best_sum = sum;
                best = (x, y);
            }
        }
    }
    Ok(best)
}

/// Crop a (channels, h, w) image at top-left (row, col) with side `wp`.
pub fn extract_patch(image: &Array3<f32>, x: usize, y: usize, wp: usize) -> Result<Array3<f32>> {
    let (_, h, w) = image.dim();
    if wp == 0 || x + wp > h || y + wp > w {
        return Err(Error::Config(format!(
            "crop ({x}, {y}) side {wp} leaves a {h}x{w} image"
        )));
    }
    Ok(image.slice(s![.., x..x + wp, y..y + wp]).to_owned())
}

/// Rank a candidate by replaying it (zero-padded at its stored position)
/// through the model: exact prediction, within the top min(3, classes) of
/// its head, or neither.
pub fn classify_candidate(
    model: &MultiHeadModel,
    patch: &MemoryPatch,
    task_id: usize,
) -> Result<PredictionTier> {
    let padded = zero_pad(patch, model.image_side, model.image_side)?;
    let k = model.classes_per_task.min(3);
    let top = model.predict_topk(&padded, task_id, k)?;
    if top.first() == Some(&patch.label_unit) {
        Ok(PredictionTier::Correct)
    } else if top.contains(&patch.label_unit) {
        Ok(PredictionTier::Top3)
    } else {
        Ok(PredictionTier::Other)
    }
}

/// Keep up to `quota` candidates, preferring confidently re-recognized ones:
/// all Correct first, then Top3, then the rest, each tier in input order.
pub fn select_patches(candidates: Vec<PatchCandidate>, quota: usize) -> Vec<PatchCandidate> {
    let mut kept = Vec::with_capacity(quota.min(candidates.len()));
    for tier in [
        PredictionTier::Correct,
        PredictionTier::Top3,
        PredictionTier::Other,
    ] {
        for cand in candidates.iter().filter(|c| c.tier == tier) {
            if kept.len() == quota {
                return kept;
            }
            kept.push(cand.clone());
        }
    }
    kept
}

/// End-of-task memory update: for every class staged during the task, score
/// each staged image's most salient patch, then store the best `epf` per
/// class. Deterministic given the model and staging contents (no sampling).
/// The caller clears the staging buffer afterwards.
pub fn update_memory(
    memory: &mut EpisodicMemory,
    staging: &RingBuffer<Example>,
    model: &MultiHeadModel,
    task: &Task,
    config: &PackingConfig,
) -> Result<()> {
    debug_assert_eq!(memory.per_class_quota, config.epf);
    let wp = patch_width(config.n_sc, config.epf, config.image_side)?;
    for &class in &task.label_set {
        let staged: Vec<&Example> = staging.class_items(class).collect();
        if staged.is_empty() {
            eprintln!(
                "warning: no staged examples for class {class} at end of task {}",
                task.id
            );
            continue;
        }
        let unit = task
            .head_index(class)
            .ok_or_else(|| Error::Config(format!("class {class} not in task {}", task.id)))?;
        let mut candidates = Vec::with_capacity(staged.len());
        for example in staged {
            let map = generate_saliency(model, &example.image, unit, task.id)?;
            let (x, y) = locate_salient_patch(&map, wp, config.stride)?;
            let pixels = extract_patch(&example.image, x, y, wp)?;
            let mut patch = MemoryPatch {
                pixels,
                task_id: task.id,
                label: class,
                label_unit: unit,
                x_cord: x,
                y_cord: y,
                source_id: example.id,
                tier: PredictionTier::Other,
            };
            patch.tier = classify_candidate(model, &patch, task.id)?;
            candidates.push(patch);
        }
        for patch in select_patches(candidates, config.epf) {
            memory.insert(patch)?;
        }
    }
    Ok(())
}
