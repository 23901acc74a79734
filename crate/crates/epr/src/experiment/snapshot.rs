//! Rendering a run's final buffer to browsable PNGs plus a JSON manifest.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::imgio::save_rgb_png;
use crate::trainer::FinalBuffer;
use crate::{Error, Result};

/// One stored item in a memory snapshot. Crop geometry is present only for
/// patch buffers.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct SnapshotEntry {
    pub path: String,
    pub task: usize,
    pub class: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub x_cord: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub y_cord: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub w_p: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tier: Option<String>,
}

/// Write every buffered item as a PNG under `dir` and describe them all in
/// `dir/manifest.json`. An empty buffer still produces a (empty) manifest.
pub fn write_memory_snapshot(buffer: &FinalBuffer, dir: &Path) -> Result<Vec<SnapshotEntry>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut entries = Vec::new();
    match buffer {
        FinalBuffer::Patches(memory) => {
            for (idx, patch) in memory.patches().iter().enumerate() {
                let rel = format!(
                    "patch{idx:04}_task{:02}_class{:03}.png",
                    patch.task_id, patch.label
                );
                save_rgb_png(&patch.pixels.view(), &dir.join(&rel))?;
                entries.push(SnapshotEntry {
                    path: rel,
                    task: patch.task_id,
                    class: patch.label,
                    x_cord: Some(patch.x_cord),
                    y_cord: Some(patch.y_cord),
                    w_p: Some(patch.pixels.dim().1),
                    tier: Some(patch.tier.name().to_string()),
                });
            }
        }
        FinalBuffer::Examples(examples) => {
            for (idx, ex) in examples.iter().enumerate() {
                let rel = format!("example{idx:04}_task{:02}_class{:03}.png", ex.task_id, ex.label);
                save_rgb_png(&ex.image.view(), &dir.join(&rel))?;
                entries.push(SnapshotEntry {
                    path: rel,
                    task: ex.task_id,
                    class: ex.label,
                    x_cord: None,
                    y_cord: None,
                    w_p: None,
                    tier: None,
                });
            }
        }
        FinalBuffer::None => {}
    }
    let manifest = dir.join("manifest.json");
    let bytes = serde_json::to_vec_pretty(&entries)?;
    fs::write(&manifest, bytes).map_err(|e| Error::io(&manifest, e))?;
    Ok(entries)
}

/// Parse a snapshot manifest; rejects anything but an array of entries.
pub fn parse_snapshot_manifest(bytes: &[u8]) -> Result<Vec<SnapshotEntry>> {
    Ok(serde_json::from_slice(bytes)?)
}

pub fn read_snapshot_manifest(dir: &Path) -> Result<Vec<SnapshotEntry>> {
    let path = dir.join("manifest.json");
    let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    parse_snapshot_manifest(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_parses_and_rejects() {
        let good = br#"[{"path":"p.png","task":1,"class":3,"x_cord":2,"y_cord":5,"w_p":11,"tier":"correct"}]"#;
        let entries = parse_snapshot_manifest(good).unwrap();
        assert_eq!(entries.len(), 1);
        assert_eq!(entries[0].w_p, Some(11));
        assert_eq!(parse_snapshot_manifest(b"[]").unwrap(), vec![]);
        assert!(parse_snapshot_manifest(b"{}").is_err());
        assert!(parse_snapshot_manifest(b"[{\"path\":3}]").is_err());
        assert!(parse_snapshot_manifest(b"not json").is_err());
    }

    #[test]
    fn empty_buffer_writes_empty_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let entries = write_memory_snapshot(&FinalBuffer::None, dir.path()).unwrap();
        assert!(entries.is_empty());
        assert_eq!(read_snapshot_manifest(dir.path()).unwrap(), entries);
    }
}
