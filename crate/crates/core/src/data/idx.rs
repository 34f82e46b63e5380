use std::io::Read;
use std::path::Path;

use flate2::read::GzDecoder;

use super::Dataset;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const IMAGES_MAGIC: u32 = 2051;
const LABELS_MAGIC: u32 = 2049;
const GZIP_MAGIC: [u8; 2] = [0x1f, 0x8b];

fn read_u32_be(bytes: &[u8], offset: usize, what: &str) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::format(format!("truncated header: missing {what}")))
}

/// Parses an IDX image payload into a [N, 1, rows, cols] tensor scaled 1/255.
pub fn load_idx_images(bytes: &[u8]) -> Result<Tensor> {
    let magic = read_u32_be(bytes, 0, "image magic")?;
    if magic != IMAGES_MAGIC {
        return Err(Error::format(format!(
            "image magic {IMAGES_MAGIC} expected, got {magic}"
        )));
    }
    let n = read_u32_be(bytes, 4, "image count")? as usize;
    let rows = read_u32_be(bytes, 8, "row count")? as usize;
    let cols = read_u32_be(bytes, 12, "column count")? as usize;
    let expected = n
        .checked_mul(rows)
        .and_then(|x| x.checked_mul(cols))
        .ok_or_else(|| Error::format("image dimensions overflow".to_string()))?;
    let payload = &bytes[16.min(bytes.len())..];
    if payload.len() != expected {
        return Err(Error::format(format!(
            "image payload truncated: expected {expected} bytes, got {}",
            payload.len()
        )));
    }
    Tensor::new(
        vec![n, 1, rows, cols],
        payload.iter().map(|&b| b as f64 / 255.0).collect(),
    )
}

/// Parses an IDX label payload into raw class indices (0..=255).
pub fn load_idx_labels(bytes: &[u8]) -> Result<Vec<usize>> {
    let magic = read_u32_be(bytes, 0, "label magic")?;
    if magic != LABELS_MAGIC {
        return Err(Error::format(format!(
            "label magic {LABELS_MAGIC} expected, got {magic}"
        )));
    }
    let n = read_u32_be(bytes, 4, "label count")? as usize;
    let payload = &bytes[8.min(bytes.len())..];
    if payload.len() != n {
        return Err(Error::format(format!(
            "label payload truncated: expected {n} bytes, got {}",
            payload.len()
        )));
    }
    Ok(payload.iter().map(|&b| b as usize).collect())
}

/// Serializes a single-channel image tensor back to IDX bytes.
/// Pixel p maps to round(p * 255), the inverse of the loader's scaling.
pub fn write_idx_images(images: &Tensor) -> Result<Vec<u8>> {
    let (n, rows, cols) = match images.shape() {
        [n, 1, h, w] => (*n, *h, *w),
        other => {
            return Err(Error::shape(format!(
                "IDX export needs a [N, 1, rows, cols] tensor, got {other:?}"
            )))
        }
    };
    let mut out = Vec::with_capacity(16 + images.len());
    out.extend_from_slice(&IMAGES_MAGIC.to_be_bytes());
    out.extend_from_slice(&(n as u32).to_be_bytes());
    out.extend_from_slice(&(rows as u32).to_be_bytes());
    out.extend_from_slice(&(cols as u32).to_be_bytes());
    for &p in images.data() {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::domain(format!("pixel value {p} outside [0, 1]")));
        }
        out.push((p * 255.0).round() as u8);
    }
    Ok(out)
}

pub fn write_idx_labels(labels: &[usize]) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    for &l in labels {
        if l > 255 {
            return Err(Error::domain(format!("label {l} does not fit in a byte")));
        }
        out.push(l as u8);
    }
    Ok(out)
}

/// Reads a file, transparently decompressing when it starts with the gzip
/// magic 0x1f8b.
pub fn read_file_maybe_gzip(path: &Path) -> Result<Vec<u8>> {
    let raw = std::fs::read(path)?;
    if raw.len() >= 2 && raw[..2] == GZIP_MAGIC {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice())
            .read_to_end(&mut out)
            .map_err(|e| Error::format(format!("gzip decode of {}: {e}", path.display())))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

/// Loads an image/label IDX file pair (optionally gzipped) into a Dataset.
pub fn load_idx_dataset(images_path: &Path, labels_path: &Path, classes: usize) -> Result<Dataset> {
    let images = load_idx_images(&read_file_maybe_gzip(images_path)?)?;
    let labels = load_idx_labels(&read_file_maybe_gzip(labels_path)?)?;
    Dataset::new(images, labels, classes)
}
