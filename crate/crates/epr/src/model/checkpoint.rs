//! Self-describing model checkpoints: an 8-byte magic, a length-prefixed
//! JSON header (architecture, head map, tensor index), then raw f32 blobs.
//! The reader validates every length before allocating, so arbitrary bytes
//! fail cleanly instead of panicking.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{build_model, Arch, Backbone, MultiHeadModel};
use crate::nn::{BatchNorm2d, Conv2d};
use crate::{Error, Result};

const MAGIC: &[u8; 8] = b"EPRCKPT1";
const MAX_HEADER_BYTES: usize = 1 << 20;
/// Hard cap on model size accepted by the reader: 64M floats (256 MB).
const MAX_ELEMENTS: usize = 1 << 26;
const MAX_TASKS: usize = 1024;
const MAX_CLASSES_PER_TASK: usize = 1024;

#[derive(Serialize, Deserialize)]
struct Header {
    arch: String,
    image_side: usize,
    channels: usize,
    classes_per_task: usize,
    n_tasks: usize,
    target_layer: String,
    tensors: Vec<TensorMeta>,
}

#[derive(Serialize, Deserialize)]
struct TensorMeta {
    name: String,
    shape: Vec<usize>,
}

fn conv_entries<'a>(prefix: &str, conv: &'a Conv2d, out: &mut Vec<(String, Vec<usize>, &'a [f32])>) {
    let (o, i) = conv.weight.dim();
    out.push((
        format!("{prefix}.weight"),
        vec![o, i],
        conv.weight.as_slice().expect("standard layout"),
    ));
    out.push((
        format!("{prefix}.bias"),
        vec![conv.bias.len()],
        conv.bias.as_slice().expect("standard layout"),
    ));
}

fn bn_entries<'a>(prefix: &str, bn: &'a BatchNorm2d, out: &mut Vec<(String, Vec<usize>, &'a [f32])>) {
    for (field, arr) in [
        ("gamma", &bn.gamma),
        ("beta", &bn.beta),
        ("running_mean", &bn.running_mean),
        ("running_var", &bn.running_var),
    ] {
        out.push((
            format!("{prefix}.{field}"),
            vec![arr.len()],
            arr.as_slice().expect("standard layout"),
        ));
    }
}

fn conv_entries_mut<'a>(
    prefix: &str,
    conv: &'a mut Conv2d,
    out: &mut Vec<(String, Vec<usize>, &'a mut [f32])>,
) {
    let (o, i) = conv.weight.dim();
    out.push((
        format!("{prefix}.weight"),
        vec![o, i],
        conv.weight.as_slice_mut().expect("standard layout"),
    ));
    out.push((
        format!("{prefix}.bias"),
        vec![conv.bias.len()],
        conv.bias.as_slice_mut().expect("standard layout"),
    ));
}

fn bn_entries_mut<'a>(
    prefix: &str,
    bn: &'a mut BatchNorm2d,
    out: &mut Vec<(String, Vec<usize>, &'a mut [f32])>,
) {
    for (field, arr) in [
        ("gamma", &mut bn.gamma),
        ("beta", &mut bn.beta),
        ("running_mean", &mut bn.running_mean),
        ("running_var", &mut bn.running_var),
    ] {
        out.push((
            format!("{prefix}.{field}"),
            vec![arr.len()],
            arr.as_slice_mut().expect("standard layout"),
        ));
    }
}

impl MultiHeadModel {
    pub(crate) fn named_tensors(&self) -> Vec<(String, Vec<usize>, &[f32])> {
        let mut out = Vec::new();
        match &self.backbone {
            Backbone::Small(b) => {
                conv_entries("backbone.conv1", &b.conv1, &mut out);
                conv_entries("backbone.conv2", &b.conv2, &mut out);
                conv_entries("backbone.conv3", &b.conv3, &mut out);
            }
            Backbone::Resnet(b) => {
                conv_entries("backbone.stem.conv", &b.conv1, &mut out);
                bn_entries("backbone.stem.bn", &b.bn1, &mut out);
                for (i, block) in b.blocks.iter().enumerate() {
                    let p = format!("backbone.block{i}");
                    conv_entries(&format!("{p}.conv1"), &block.conv1, &mut out);
                    bn_entries(&format!("{p}.bn1"), &block.bn1, &mut out);
                    conv_entries(&format!("{p}.conv2"), &block.conv2, &mut out);
                    bn_entries(&format!("{p}.bn2"), &block.bn2, &mut out);
                    if let Some((conv, bn)) = &block.shortcut {
                        conv_entries(&format!("{p}.shortcut.conv"), conv, &mut out);
                        bn_entries(&format!("{p}.shortcut.bn"), bn, &mut out);
                    }
                }
            }
        }
        for (t, head) in self.heads.iter().enumerate() {
            let (o, i) = head.weight.dim();
            out.push((
                format!("head{t}.weight"),
                vec![o, i],
                head.weight.as_slice().expect("standard layout"),
            ));
            out.push((
                format!("head{t}.bias"),
                vec![head.bias.len()],
                head.bias.as_slice().expect("standard layout"),
            ));
        }
        out
    }

    fn named_tensors_mut(&mut self) -> Vec<(String, Vec<usize>, &mut [f32])> {
        let mut out = Vec::new();
        match &mut self.backbone {
            Backbone::Small(b) => {
                conv_entries_mut("backbone.conv1", &mut b.conv1, &mut out);
                conv_entries_mut("backbone.conv2", &mut b.conv2, &mut out);
                conv_entries_mut("backbone.conv3", &mut b.conv3, &mut out);
            }
            Backbone::Resnet(b) => {
                conv_entries_mut("backbone.stem.conv", &mut b.conv1, &mut out);
                bn_entries_mut("backbone.stem.bn", &mut b.bn1, &mut out);
                for (i, block) in b.blocks.iter_mut().enumerate() {
                    let p = format!("backbone.block{i}");
                    conv_entries_mut(&format!("{p}.conv1"), &mut block.conv1, &mut out);
                    bn_entries_mut(&format!("{p}.bn1"), &mut block.bn1, &mut out);
                    conv_entries_mut(&format!("{p}.conv2"), &mut block.conv2, &mut out);
                    bn_entries_mut(&format!("{p}.bn2"), &mut block.bn2, &mut out);
                    if let Some((conv, bn)) = &mut block.shortcut {
                        conv_entries_mut(&format!("{p}.shortcut.conv"), conv, &mut out);
                        bn_entries_mut(&format!("{p}.shortcut.bn"), bn, &mut out);
                    }
                }
            }
        }
        for (t, head) in self.heads.iter_mut().enumerate() {
            let (o, i) = head.weight.dim();
            out.push((
                format!("head{t}.weight"),
                vec![o, i],
                head.weight.as_slice_mut().expect("standard layout"),
            ));
            out.push((
                format!("head{t}.bias"),
                vec![head.bias.len()],
                head.bias.as_slice_mut().expect("standard layout"),
            ));
        }
        out
    }
}

pub fn to_bytes(model: &MultiHeadModel) -> Result<Vec<u8>> {
    let tensors = model.named_tensors();
    let header = Header {
        arch: model.arch.to_string(),
        image_side: model.image_side,
        channels: model.channels,
        classes_per_task: model.classes_per_task,
        n_tasks: model.heads.len(),
        target_layer: model.target_layer.clone(),
        tensors: tensors
            .iter()
            .map(|(name, shape, _)| TensorMeta {
                name: name.clone(),
                shape: shape.clone(),
            })
            .collect(),
    };
    let header_json = serde_json::to_vec(&header)?;
    let blob_len: usize = tensors.iter().map(|(_, _, d)| d.len() * 4).sum();
    let mut out = Vec::with_capacity(12 + header_json.len() + blob_len);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(header_json.len() as u32).to_le_bytes());
    out.extend_from_slice(&header_json);
    for (_, _, data) in &tensors {
        for v in *data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn save(model: &MultiHeadModel, path: &Path) -> Result<()> {
    let bytes = to_bytes(model)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Rough element count implied by a header, used to reject absurd model
/// declarations before any allocation happens.
fn estimated_elements(arch: Arch, image_side: usize, cpt: usize, n_tasks: usize) -> Option<usize> {
    let feature_dim = match arch {
        Arch::SmallCnn => {
            let s8 = image_side.checked_div(8)?;
            64usize.checked_mul(s8.checked_mul(s8)?)?
        }
        Arch::ReducedResnet18 => 160,
    };
    let head = feature_dim.checked_add(1)?.checked_mul(cpt)?;
    let heads = head.checked_mul(n_tasks)?;
    // Backbone parameter counts are bounded well under 2M for both archs.
    heads.checked_add(2_000_000)
}

pub fn from_bytes(bytes: &[u8]) -> Result<MultiHeadModel> {
    let fail = |msg: &str| Error::Parse(format!("checkpoint: {msg}"));
    if bytes.len() < MAGIC.len() + 4 {
        return Err(fail("too short"));
    }
    if &bytes[..MAGIC.len()] != MAGIC {
        return Err(fail("bad magic"));
    }
    let header_len =
        u32::from_le_bytes(bytes[8..12].try_into().expect("sized slice")) as usize;
    if header_len > MAX_HEADER_BYTES {
        return Err(fail("header too large"));
    }
    let blob_start = 12usize.checked_add(header_len).ok_or_else(|| fail("length overflow"))?;
    if blob_start > bytes.len() {
        return Err(fail("truncated header"));
    }
    let header: Header =
        serde_json::from_slice(&bytes[12..blob_start]).map_err(Error::Json)?;
    let arch: Arch = header.arch.parse()?;
    if header.n_tasks == 0 || header.n_tasks > MAX_TASKS {
        return Err(fail("task count out of range"));
    }
    if header.classes_per_task > MAX_CLASSES_PER_TASK {
        return Err(fail("classes per task out of range"));
    }
    match estimated_elements(arch, header.image_side, header.classes_per_task, header.n_tasks) {
        Some(n) if n <= MAX_ELEMENTS => {}
        _ => return Err(fail("declared model too large")),
    }
    // Declared tensor sizes must exactly cover the blob.
    let mut declared = 0usize;
    for meta in &header.tensors {
        let mut elems = 1usize;
        for &d in &meta.shape {
            elems = elems.checked_mul(d).ok_or_else(|| fail("shape overflow"))?;
        }
        declared = declared
            .checked_add(elems)
            .filter(|&n| n <= MAX_ELEMENTS)
            .ok_or_else(|| fail("declared tensors too large"))?;
    }
    let blob = &bytes[blob_start..];
    if declared.checked_mul(4) != Some(blob.len()) {
        return Err(fail("blob length does not match declared tensors"));
    }

    let mut model = build_model(
        arch,
        header.n_tasks,
        header.classes_per_task,
        header.image_side,
        header.channels,
        0,
    )?;
    model.set_target_layer(&header.target_layer)?;

    let mut tensors = model.named_tensors_mut();
    let mut index: HashMap<String, usize> = HashMap::with_capacity(tensors.len());
    for (i, (name, _, _)) in tensors.iter().enumerate() {
        index.insert(name.clone(), i);
    }
    let mut filled = vec![false; tensors.len()];
    let mut offset = 0usize;
    for meta in &header.tensors {
        let &i = index
            .get(&meta.name)
            .ok_or_else(|| fail(&format!("unknown tensor '{}'", meta.name)))?;
        let (_, shape, data) = &mut tensors[i];
        if *shape != meta.shape {
            return Err(fail(&format!("shape mismatch for '{}'", meta.name)));
        }
        if filled[i] {
            return Err(fail(&format!("duplicate tensor '{}'", meta.name)));
        }
        let nbytes = data.len() * 4;
        let chunk = &blob[offset..offset + nbytes];
        for (v, b) in data.iter_mut().zip(chunk.chunks_exact(4)) {
            *v = f32::from_le_bytes(b.try_into().expect("sized chunk"));
        }
        filled[i] = true;
        offset += nbytes;
    }
    if !filled.iter().all(|&f| f) {
        return Err(fail("missing tensors"));
    }
    drop(tensors);
    Ok(model)
}

pub fn load(path: &Path) -> Result<MultiHeadModel> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}
