//! Replay-time patch transforms: embedding a stored crop back into a
//! full-size frame (zeros or noise around it, original or random position)
//! and the random-crop counterpart to saliency-guided selection.

use ndarray::{s, Array3};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::packing::{MemoryPatch, PredictionTier};
use crate::{Error, Result};

fn patch_bounds(patch: &MemoryPatch, w: usize, h: usize) -> Result<(usize, usize, usize)> {
    let (c, ph, pw) = patch.pixels.dim();
    if patch.x_cord + ph > h || patch.y_cord + pw > w {
        return Err(Error::Config(format!(
            "patch {}x{} at ({}, {}) does not fit a {}x{} frame",
            ph, pw, patch.x_cord, patch.y_cord, h, w
        )));
    }
    Ok((c, ph, pw))
}

/// Embed the patch at its stored (row, col) in an otherwise-zero w×h frame.
pub fn zero_pad(patch: &MemoryPatch, w: usize, h: usize) -> Result<Array3<f32>> {
    let (c, ph, pw) = patch_bounds(patch, w, h)?;
    let mut out = Array3::zeros((c, h, w));
    out.slice_mut(s![
        ..,
        patch.x_cord..patch.x_cord + ph,
        patch.y_cord..patch.y_cord + pw
    ])
    .assign(&patch.pixels);
    Ok(out)
}

/// Embed the patch at its stored position; fill the complement with i.i.d.
/// standard-normal noise.
pub fn random_pad(
    patch: &MemoryPatch,
    w: usize,
    h: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Array3<f32>> {
    let (c, ph, pw) = patch_bounds(patch, w, h)?;
    let mut out = Array3::from_shape_simple_fn((c, h, w), || rng.sample::<f32, _>(StandardNormal));
    out.slice_mut(s![
        ..,
        patch.x_cord..patch.x_cord + ph,
        patch.y_cord..patch.y_cord + pw
    ])
    .assign(&patch.pixels);
    Ok(out)
}

/// Embed the patch at a uniformly random valid position in a zero frame,
/// ignoring its stored coordinates.
pub fn random_place(
    patch: &MemoryPatch,
    w: usize,
    h: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Array3<f32>> {
    let (c, ph, pw) = patch.pixels.dim();
    if ph > h || pw > w {
        return Err(Error::Config(format!(
            "patch {ph}x{pw} does not fit a {h}x{w} frame"
        )));
    }
    let x = rng.gen_range(0..=h - ph);
    let y = rng.gen_range(0..=w - pw);
    let mut out = Array3::zeros((c, h, w));
    out.slice_mut(s![.., x..x + ph, y..y + pw]).assign(&patch.pixels);
    Ok(out)
}

/// Crop a uniformly random wp×wp window, keeping its true coordinates so it
/// can be replayed exactly where it came from. Routing metadata (task,
/// label, source) is left neutral for the caller to fill in.
pub fn random_snip(image: &Array3<f32>, wp: usize, rng: &mut ChaCha8Rng) -> Result<MemoryPatch> {
    let (_, h, w) = image.dim();
    if wp == 0 || wp > h || wp > w {
        return Err(Error::Config(format!(
            "crop side {wp} does not fit a {h}x{w} image"
        )));
    }
    let x = rng.gen_range(0..=h - wp);
    let y = rng.gen_range(0..=w - wp);
    Ok(MemoryPatch {
        pixels: image.slice(s![.., x..x + wp, y..y + wp]).to_owned(),
        task_id: 0,
        label: 0,
        label_unit: 0,
        x_cord: x,
        y_cord: y,
        source_id: 0,
        tier: PredictionTier::Other,
    })
}
