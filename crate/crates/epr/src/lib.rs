//! Online continual learning with patch-packed episodic memories.
//!
//! A training run observes a sequence of image-classification tasks, each
//! example exactly once. After finishing a task, the most salient square
//! patch of a handful of staged images is cropped per class and stored in a
//! tiny episodic memory; while learning later tasks those patches are
//! zero-padded back to full resolution and replayed alongside the current
//! batch. The crate also ships the reference baselines (ring/reservoir
//! experience replay, finetuning, a multitask oracle), the ablation variants
//! of the padding/placement/selection rules, and the experiment harness that
//! cross-validates, runs seeds, and renders tables and plots.

pub mod data;
pub mod error;
pub mod experiment;
pub(crate) mod imgio;
pub mod memory;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod packing;
pub mod rng;
pub mod saliency;
pub mod trainer;

pub use error::{Error, Result};
