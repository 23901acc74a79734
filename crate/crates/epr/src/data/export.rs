use std::fs;
use std::path::Path;

use serde::Serialize;

use super::types::TaskStream;
use crate::imgio::save_rgb_png;
use crate::{Error, Result};

#[derive(Serialize)]
struct ManifestEntry {
    path: String,
    label: usize,
    task: usize,
    split: &'static str,
    /// [row, col, height, width] of the ground-truth object, when known.
    #[serde(skip_serializing_if = "Option::is_none")]
    box_xywh: Option<[usize; 4]>,
}

/// Writes every image of a stream as a PNG plus a manifest.json describing
/// path, label, task, and ground-truth box.
pub fn export_stream(stream: &TaskStream, dir: &Path) -> Result<()> {
    let images = dir.join("images");
    fs::create_dir_all(&images).map_err(|e| Error::io(&images, e))?;
    let mut manifest = Vec::new();
    for task in &stream.tasks {
        for (split, examples) in [("train", &task.train), ("test", &task.test)] {
            for ex in examples {
                let rel = format!("images/task{:02}_{split}_{:06}.png", task.id, ex.id);
                save_rgb_png(&ex.image.view(), &dir.join(&rel))?;
                manifest.push(ManifestEntry {
                    path: rel,
                    label: ex.label,
                    task: task.id,
                    split,
                    box_xywh: ex.object_box,
                });
            }
        }
    }
    let manifest_path = dir.join("manifest.json");
    let json = serde_json::to_string_pretty(&manifest)?;
    fs::write(&manifest_path, json).map_err(|e| Error::io(&manifest_path, e))?;
    Ok(())
}
