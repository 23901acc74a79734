use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array3;

use super::types::{DatasetSource, SourceImage};
use crate::{Error, Result};

/// One serialized record: coarse label, fine label, 3×32×32 planar pixels.
pub const CIFAR_RECORD_LEN: usize = 2 + 3 * 32 * 32;

const PLANE: usize = 32 * 32;
const FINE_CLASSES: usize = 100;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CifarRecord {
    pub coarse_label: u8,
    pub fine_label: u8,
    /// Planar RGB: 1024 red bytes, 1024 green, 1024 blue, row-major.
    pub pixels: Vec<u8>,
}

/// Parses the concatenated fixed-width records of a CIFAR-100 binary file.
/// Never panics on malformed input; length and label errors are reported.
pub fn parse_cifar_records(data: &[u8]) -> Result<Vec<CifarRecord>> {
    if data.len() % CIFAR_RECORD_LEN != 0 {
        return Err(Error::Parse(format!(
            "binary length {} is not a multiple of the {}-byte record size",
            data.len(),
            CIFAR_RECORD_LEN
        )));
    }
    let mut records = Vec::with_capacity(data.len() / CIFAR_RECORD_LEN);
    for chunk in data.chunks_exact(CIFAR_RECORD_LEN) {
        let fine_label = chunk[1];
        if usize::from(fine_label) >= FINE_CLASSES {
            return Err(Error::Parse(format!(
                "fine label {fine_label} out of range (record {})",
                records.len()
            )));
        }
        records.push(CifarRecord {
            coarse_label: chunk[0],
            fine_label,
            pixels: chunk[2..].to_vec(),
        });
    }
    Ok(records)
}

fn record_to_image(rec: &CifarRecord) -> Array3<f32> {
    let mut image = Array3::zeros((3, 32, 32));
    let out = image.as_slice_mut().unwrap();
    for (i, &b) in rec.pixels.iter().enumerate() {
        out[i] = f32::from(b) / 255.0;
    }
    let _ = PLANE;
    image
}

fn find_file(dir: &Path, name: &str) -> Result<PathBuf> {
    let direct = dir.join(name);
    if direct.is_file() {
        return Ok(direct);
    }
    let nested = dir.join("cifar-100-binary").join(name);
    if nested.is_file() {
        return Ok(nested);
    }
    Err(Error::MissingDataDir(direct))
}

/// Loads a CIFAR-100 binary directory (train.bin + test.bin, optionally
/// under a cifar-100-binary/ subdirectory) into the canonical layout.
pub fn load_cifar100(dir: &Path) -> Result<DatasetSource> {
    if !dir.is_dir() {
        return Err(Error::MissingDataDir(dir.to_path_buf()));
    }
    let load = |name: &str, id_base: u64| -> Result<Vec<SourceImage>> {
        let path = find_file(dir, name)?;
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let records = parse_cifar_records(&bytes)?;
        Ok(records
            .iter()
            .enumerate()
            .map(|(i, rec)| SourceImage {
                id: id_base + i as u64,
                image: record_to_image(rec),
                label: usize::from(rec.fine_label),
                object_box: None,
            })
            .collect())
    };
    let train = load("train.bin", 0)?;
    let test = load("test.bin", 1 << 32)?;
    if train.is_empty() || test.is_empty() {
        return Err(Error::Dataset("empty train or test split".into()));
    }
    Ok(DatasetSource {
        name: "cifar100".into(),
        image_side: 32,
        channels: 3,
        n_classes: FINE_CLASSES,
        train,
        test,
    })
}
