//! On-disk formats.
//!
//! HOTX v1 (datasets): magic `HOTX`, u8 version, u32-LE image count, u16-LE
//! height, u16-LE width, u8 channels, labels (u8 per image), pixels (u8 each,
//! row-major within an image, image-major overall).
//!
//! HOCK v1 (checkpoints): magic `HOCK`, u8 version, u32-LE JSON length, the
//! JSON model manifest, then for each layer its parameter vectors followed by
//! its buffer vectors as little-endian f64 arrays in declaration order.
//! Both formats round-trip bit-exactly.

use crate::error::{Error, Result};
use crate::model::{LayerSpec, Model};
use crate::textures::TextureDataset;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;

const HOTX_MAGIC: &[u8; 4] = b"HOTX";
const HOCK_MAGIC: &[u8; 4] = b"HOCK";
pub const FORMAT_VERSION: u8 = 1;

/// Writes bytes atomically: temp file in the same directory, then rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    std::fs::create_dir_all(dir)?;
    let tmp = dir.join(format!(
        ".{}.tmp",
        path.file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| "out".into())
    ));
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn write_hotx(path: &Path, set: &TextureDataset) -> Result<()> {
    let count = set.len();
    if count > u32::MAX as usize || set.height > u16::MAX as usize || set.width > u16::MAX as usize
    {
        return Err(Error::Format("dataset dimensions exceed HOTX v1 limits".into()));
    }
    let mut bytes = Vec::with_capacity(12 + count + set.pixels.len());
    bytes.extend_from_slice(HOTX_MAGIC);
    bytes.push(FORMAT_VERSION);
    bytes.extend_from_slice(&(count as u32).to_le_bytes());
    bytes.extend_from_slice(&(set.height as u16).to_le_bytes());
    bytes.extend_from_slice(&(set.width as u16).to_le_bytes());
    bytes.push(set.channels as u8);
    bytes.extend_from_slice(&set.labels);
    bytes.extend_from_slice(&set.pixels);
    write_atomic(path, &bytes)
}

pub fn read_hotx(path: &Path) -> Result<TextureDataset> {
    let mut f = std::fs::File::open(path)?;
    let mut bytes = Vec::new();
    f.read_to_end(&mut bytes)?;
    if bytes.len() < 12 || &bytes[..4] != HOTX_MAGIC {
        return Err(Error::Format(format!("{}: not a HOTX file", path.display())));
    }
    if bytes[4] != FORMAT_VERSION {
        return Err(Error::Format(format!("unsupported HOTX version {}", bytes[4])));
    }
    let count = u32::from_le_bytes(bytes[5..9].try_into().unwrap()) as usize;
    let h = u16::from_le_bytes(bytes[9..11].try_into().unwrap()) as usize;
    let w = u16::from_le_bytes(bytes[11..13].try_into().unwrap()) as usize;
    let channels = bytes[13] as usize;
    let labels_at = 14;
    let pixels_at = labels_at + count;
    let pixel_len = count * channels * h * w;
    if bytes.len() != pixels_at + pixel_len {
        return Err(Error::Format(format!(
            "{}: expected {} bytes, found {}",
            path.display(),
            pixels_at + pixel_len,
            bytes.len()
        )));
    }
    let labels = bytes[labels_at..pixels_at].to_vec();
    let pixels = bytes[pixels_at..].to_vec();
    let split = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Ok(TextureDataset {
        height: h,
        width: w,
        channels,
        pixels,
        labels,
        split,
    })
}

/// JSON head of a checkpoint: layer manifest plus reproducibility metadata.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub tool_version: String,
    pub config_hash: String,
    pub model_kind: String,
    pub seed: u64,
    pub layers: Vec<LayerSpec>,
    /// element count of every weight array, in file order
    pub array_lens: Vec<usize>,
}

fn model_arrays(model: &Model) -> Vec<&[f64]> {
    let mut arrays = Vec::new();
    for layer in &model.layers {
        arrays.extend(layer.param_slices());
        arrays.extend(layer.buffer_slices());
    }
    arrays
}

pub fn write_checkpoint(
    path: &Path,
    model: &Model,
    model_kind: &str,
    seed: u64,
    config_hash: &str,
    tool_version: &str,
) -> Result<()> {
    let arrays = model_arrays(model);
    let manifest = CheckpointManifest {
        tool_version: tool_version.to_string(),
        config_hash: config_hash.to_string(),
        model_kind: model_kind.to_string(),
        seed,
        layers: model.describe(),
        array_lens: arrays.iter().map(|a| a.len()).collect(),
    };
    let json = serde_json::to_vec(&manifest)
        .map_err(|e| Error::Format(format!("manifest encode: {e}")))?;
    let mut bytes = Vec::new();
    bytes.extend_from_slice(HOCK_MAGIC);
    bytes.push(FORMAT_VERSION);
    bytes.extend_from_slice(&(json.len() as u32).to_le_bytes());
    bytes.extend_from_slice(&json);
    for arr in arrays {
        for v in arr {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    write_atomic(path, &bytes)
}

pub fn read_checkpoint(path: &Path) -> Result<(Model, CheckpointManifest)> {
    let mut f = std::fs::File::open(path)?;
    let mut bytes = Vec::new();
    f.read_to_end(&mut bytes)?;
    if bytes.len() < 9 || &bytes[..4] != HOCK_MAGIC {
        return Err(Error::Format(format!("{}: not a HOCK file", path.display())));
    }
    if bytes[4] != FORMAT_VERSION {
        return Err(Error::Format(format!("unsupported HOCK version {}", bytes[4])));
    }
    let json_len = u32::from_le_bytes(bytes[5..9].try_into().unwrap()) as usize;
    let json_end = 9 + json_len;
    if bytes.len() < json_end {
        return Err(Error::Format("truncated checkpoint manifest".into()));
    }
    let manifest: CheckpointManifest = serde_json::from_slice(&bytes[9..json_end])
        .map_err(|e| Error::Format(format!("manifest decode: {e}")))?;
    let mut model = Model::from_specs(&manifest.layers)?;
    let mut offset = json_end;
    let mut array_idx = 0usize;
    let fill = |target: &mut Vec<f64>, offset: &mut usize, array_idx: &mut usize| -> Result<()> {
        let want_len = *manifest
            .array_lens
            .get(*array_idx)
            .ok_or_else(|| Error::Format("manifest lists too few arrays".into()))?;
        if target.len() != want_len {
            return Err(Error::Format(format!(
                "array {} length {} does not match manifest {}",
                array_idx,
                target.len(),
                want_len
            )));
        }
        let need = want_len * 8;
        if bytes.len() < *offset + need {
            return Err(Error::Format("truncated checkpoint weights".into()));
        }
        for (i, slot) in target.iter_mut().enumerate() {
            let at = *offset + i * 8;
            *slot = f64::from_le_bytes(bytes[at..at + 8].try_into().unwrap());
        }
        *offset += need;
        *array_idx += 1;
        Ok(())
    };
    for layer in &mut model.layers {
        for p in layer.param_vecs() {
            fill(p, &mut offset, &mut array_idx)?;
        }
        for b in layer.buffer_vecs() {
            fill(b, &mut offset, &mut array_idx)?;
        }
    }
    if array_idx != manifest.array_lens.len() {
        return Err(Error::Format(format!(
            "manifest lists {} arrays, model has {}",
            manifest.array_lens.len(),
            array_idx
        )));
    }
    if offset != bytes.len() {
        return Err(Error::Format(format!(
            "{} trailing bytes after weights",
            bytes.len() - offset
        )));
    }
    Ok((model, manifest))
}
