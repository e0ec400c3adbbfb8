//! IDX images/labels (big-endian magic 0x00000803 / 0x00000801, then
//! 32-bit big-endian dimension sizes, then raw unsigned bytes).

use std::io::{Cursor, Read};
use std::path::Path;

use byteorder::{BigEndian, ReadBytesExt};

use super::Dataset;
use crate::error::{NsvmError, Result};

const IMAGES_MAGIC: u32 = 0x0000_0803;
const LABELS_MAGIC: u32 = 0x0000_0801;

fn truncated(what: &str) -> NsvmError {
    NsvmError::Idx(format!("{what} file is truncated"))
}

/// Parses an image file into `(rows, cols, pixels scaled to [0, 1])`.
pub fn parse_idx_images(bytes: &[u8]) -> Result<(usize, usize, Vec<Vec<f64>>)> {
    let mut cur = Cursor::new(bytes);
    let magic = cur.read_u32::<BigEndian>().map_err(|_| truncated("image"))?;
    if magic != IMAGES_MAGIC {
        return Err(NsvmError::Idx(format!("image magic {magic:#010x}, expected {IMAGES_MAGIC:#010x}")));
    }
    let mut dims = [0usize; 3];
    for d in &mut dims {
        *d = cur.read_u32::<BigEndian>().map_err(|_| truncated("image"))? as usize;
    }
    let [count, rows, cols] = dims;
    let pixels = rows * cols;
    let mut raw = vec![0u8; pixels];
    let mut images = Vec::with_capacity(count);
    for _ in 0..count {
        cur.read_exact(&mut raw).map_err(|_| truncated("image"))?;
        images.push(raw.iter().map(|&b| f64::from(b) / 255.0).collect());
    }
    Ok((rows, cols, images))
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    let mut cur = Cursor::new(bytes);
    let magic = cur.read_u32::<BigEndian>().map_err(|_| truncated("label"))?;
    if magic != LABELS_MAGIC {
        return Err(NsvmError::Idx(format!("label magic {magic:#010x}, expected {LABELS_MAGIC:#010x}")));
    }
    let count = cur.read_u32::<BigEndian>().map_err(|_| truncated("label"))? as usize;
    let mut labels = vec![0u8; count];
    cur.read_exact(&mut labels).map_err(|_| truncated("label"))?;
    Ok(labels)
}

/// Loads an image/label file pair, keeping only digits `keep.0` (mapped to
/// -1) and `keep.1` (mapped to +1). Images are flattened row-major.
pub fn load_idx_images(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>, keep: (u8, u8)) -> Result<Dataset> {
    let images = std::fs::read(images_path)?;
    let labels = std::fs::read(labels_path)?;
    idx_dataset(&images, &labels, keep)
}

pub(crate) fn idx_dataset(images: &[u8], labels: &[u8], keep: (u8, u8)) -> Result<Dataset> {
    let (_, _, images) = parse_idx_images(images)?;
    let labels = parse_idx_labels(labels)?;
    if images.len() != labels.len() {
        return Err(NsvmError::Idx(format!(
            "{} images but {} labels",
            images.len(),
            labels.len()
        )));
    }
    let (inputs, ys): (Vec<_>, Vec<_>) = images
        .into_iter()
        .zip(labels)
        .filter_map(|(x, l)| match l {
            l if l == keep.0 => Some((x, -1.0)),
            l if l == keep.1 => Some((x, 1.0)),
            _ => None,
        })
        .unzip();
    Dataset::new(inputs, ys)
}
