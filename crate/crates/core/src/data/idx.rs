//! Big-endian IDX files with `u8` payloads: images (`0x00000803`, three
//! dimensions) and labels (`0x00000801`, one dimension).

use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::{Dataset, Split};

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

/// Raw contents of an IDX image file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxImages {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
}

fn read_u32(bytes: &[u8], at: usize) -> Option<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
}

/// Validates the magic number and returns the dimension sizes.
fn parse_header(bytes: &[u8], expected_magic: u32) -> Result<(Vec<usize>, usize)> {
    let magic = read_u32(bytes, 0).ok_or(Error::TruncatedHeader)?;
    if magic >> 16 != 0 {
        return Err(Error::BadMagic(magic));
    }
    if magic != expected_magic {
        return Err(Error::UnsupportedIdxType(magic));
    }
    let ndims = (magic & 0xff) as usize;
    let dims = (0..ndims)
        .map(|i| read_u32(bytes, 4 + 4 * i).map(|d| d as usize))
        .collect::<Option<Vec<_>>>()
        .ok_or(Error::TruncatedHeader)?;
    Ok((dims, 4 + 4 * ndims))
}

fn payload(bytes: &[u8], offset: usize, dims: &[usize]) -> Result<Vec<u8>> {
    let expected = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or(Error::DimensionOverflow)?;
    let found = bytes.len() - offset;
    if found < expected {
        return Err(Error::TruncatedPayload { expected, found });
    }
    if found > expected {
        return Err(Error::TrailingBytes(found - expected));
    }
    Ok(bytes[offset..].to_vec())
}

pub fn parse_idx_images(bytes: &[u8]) -> Result<IdxImages> {
    let (dims, offset) = parse_header(bytes, IMAGES_MAGIC)?;
    let pixels = payload(bytes, offset, &dims)?;
    Ok(IdxImages {
        count: dims[0],
        rows: dims[1],
        cols: dims[2],
        pixels,
    })
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    let (dims, offset) = parse_header(bytes, LABELS_MAGIC)?;
    payload(bytes, offset, &dims)
}

impl IdxImages {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + self.pixels.len());
        for v in [
            IMAGES_MAGIC,
            self.count as u32,
            self.rows as u32,
            self.cols as u32,
        ] {
            out.extend_from_slice(&v.to_be_bytes());
        }
        out.extend_from_slice(&self.pixels);
        out
    }
}

pub fn encode_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

/// Builds a `[n, 1, rows, cols]` dataset with pixels scaled to `[0, 1]`.
/// The class count is the largest label plus one.
pub fn dataset_from_idx(images: &IdxImages, labels: &[u8], split: Split) -> Result<Dataset> {
    if images.count != labels.len() {
        return Err(Error::CountMismatch {
            images: images.count,
            labels: labels.len(),
        });
    }
    let data = images.pixels.iter().map(|&p| p as f64 / 255.0).collect();
    let tensor = Tensor::new(vec![images.count, 1, images.rows, images.cols], data)?;
    let num_classes = labels.iter().copied().max().map_or(1, |m| m as usize + 1);
    Dataset::new(
        tensor,
        labels.iter().map(|&l| l as usize).collect(),
        num_classes,
        split,
    )
}

pub fn load_idx(images_path: &Path, labels_path: &Path, split: Split) -> Result<Dataset> {
    let images = parse_idx_images(&std::fs::read(images_path)?)?;
    let labels = parse_idx_labels(&std::fs::read(labels_path)?)?;
    dataset_from_idx(&images, &labels, split)
}

/// Writes a single-channel dataset with values in `[0, 1]` as an IDX pair.
pub fn write_idx(data: &Dataset, images_path: &Path, labels_path: &Path) -> Result<()> {
    let &[n, 1, rows, cols] = data.images.shape() else {
        return Err(Error::Shape(format!(
            "IDX export needs [n, 1, rows, cols], got {:?}",
            data.images.shape()
        )));
    };
    if data.labels.iter().any(|&l| l > u8::MAX as usize) {
        return Err(Error::Shape("label does not fit in u8".into()));
    }
    let images = IdxImages {
        count: n,
        rows,
        cols,
        pixels: data
            .images
            .data()
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect(),
    };
    let labels: Vec<u8> = data.labels.iter().map(|&l| l as u8).collect();
    std::fs::write(images_path, images.to_bytes())?;
    std::fs::write(labels_path, encode_idx_labels(&labels))?;
    Ok(())
}
