use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nnengine::Shape;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

/// Labelled images stored as raw bytes; pixels read back as `byte / 255`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub split: Split,
    pub shape: Shape,
    pixels: Vec<u8>,
    labels: Vec<u8>,
}

impl Dataset {
    pub fn from_raw(split: Split, shape: Shape, pixels: Vec<u8>, labels: Vec<u8>) -> Result<Self> {
        if pixels.len() != labels.len() * shape.len() {
            return Err(Error::InvalidArgument(format!(
                "{} pixels do not form {} images of {:?}",
                pixels.len(),
                labels.len(),
                shape
            )));
        }
        Ok(Dataset {
            split,
            shape,
            pixels,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn raw_image(&self, i: usize) -> &[u8] {
        let n = self.shape.len();
        &self.pixels[i * n..(i + 1) * n]
    }

    pub fn image(&self, i: usize) -> Vec<f64> {
        self.raw_image(i).iter().map(|&b| b as f64 / 255.0).collect()
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i] as usize
    }

    /// The first `n` examples (all of them if `n` exceeds the length).
    pub fn head(&self, n: usize) -> Dataset {
        let n = n.min(self.len());
        Dataset {
            split: self.split,
            shape: self.shape,
            pixels: self.pixels[..n * self.shape.len()].to_vec(),
            labels: self.labels[..n].to_vec(),
        }
    }
}

fn idx_err(path: &Path, reason: impl Into<String>) -> Error {
    Error::IdxFormat {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

fn be_u32(bytes: &[u8], offset: usize, path: &Path) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes(b.try_into().unwrap()))
        .ok_or_else(|| idx_err(path, format!("truncated header at byte {offset}")))
}

/// Parses an IDX3 image file into `(count, rows, cols, pixels)`.
pub fn parse_idx_images(bytes: &[u8], path: &Path) -> Result<(usize, usize, usize, Vec<u8>)> {
    let magic = be_u32(bytes, 0, path)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(idx_err(
            path,
            format!("magic mismatch: expected {IDX_IMAGES_MAGIC:#010x}, found {magic:#010x}"),
        ));
    }
    let n = be_u32(bytes, 4, path)? as usize;
    let rows = be_u32(bytes, 8, path)? as usize;
    let cols = be_u32(bytes, 12, path)? as usize;
    let want = n * rows * cols;
    let payload = &bytes[16..];
    if payload.len() < want {
        return Err(idx_err(
            path,
            format!("truncated payload: {} of {want} pixel bytes", payload.len()),
        ));
    }
    if payload.len() > want {
        return Err(idx_err(
            path,
            format!("{} trailing bytes after {n} images", payload.len() - want),
        ));
    }
    Ok((n, rows, cols, payload.to_vec()))
}

pub fn parse_idx_labels(bytes: &[u8], path: &Path) -> Result<Vec<u8>> {
    let magic = be_u32(bytes, 0, path)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(idx_err(
            path,
            format!("magic mismatch: expected {IDX_LABELS_MAGIC:#010x}, found {magic:#010x}"),
        ));
    }
    let n = be_u32(bytes, 4, path)? as usize;
    let payload = &bytes[8..];
    if payload.len() < n {
        return Err(idx_err(
            path,
            format!("truncated payload: {} of {n} labels", payload.len()),
        ));
    }
    if payload.len() > n {
        return Err(idx_err(path, format!("{} trailing bytes after {n} labels", payload.len() - n)));
    }
    if let Some(bad) = payload.iter().find(|&&l| l > 9) {
        return Err(idx_err(path, format!("label {bad} outside 0..=9")));
    }
    Ok(payload.to_vec())
}

pub fn load_mnist(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>, split: Split) -> Result<Dataset> {
    let (ip, lp) = (images_path.as_ref(), labels_path.as_ref());
    let ibytes = fs::read(ip).map_err(|e| Error::io(ip, e))?;
    let lbytes = fs::read(lp).map_err(|e| Error::io(lp, e))?;
    let (n, rows, cols, pixels) = parse_idx_images(&ibytes, ip)?;
    let labels = parse_idx_labels(&lbytes, lp)?;
    if labels.len() != n {
        return Err(idx_err(
            lp,
            format!("dimension mismatch: {n} images but {} labels", labels.len()),
        ));
    }
    Dataset::from_raw(split, Shape::new(1, rows, cols), pixels, labels)
}

/// Standard file names inside an MNIST directory.
pub fn mnist_paths(dir: impl AsRef<Path>, split: Split) -> (PathBuf, PathBuf) {
    let dir = dir.as_ref();
    let prefix = match split {
        Split::Train => "train",
        Split::Test => "t10k",
    };
    (
        dir.join(format!("{prefix}-images-idx3-ubyte")),
        dir.join(format!("{prefix}-labels-idx1-ubyte")),
    )
}

pub fn load_mnist_dir(dir: impl AsRef<Path>, split: Split) -> Result<Dataset> {
    let (images, labels) = mnist_paths(dir, split);
    load_mnist(images, labels, split)
}

pub fn encode_idx_images(n: usize, rows: usize, cols: usize, pixels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + pixels.len());
    for v in [IDX_IMAGES_MAGIC, n as u32, rows as u32, cols as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend_from_slice(pixels);
    out
}

pub fn encode_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn p() -> &'static Path {
        Path::new("mem")
    }

    #[test]
    fn byte_255_is_pixel_one() {
        let bytes = encode_idx_images(1, 2, 2, &[0, 255, 128, 1]);
        let (n, r, c, px) = parse_idx_images(&bytes, p()).unwrap();
        let ds = Dataset::from_raw(Split::Test, Shape::new(1, r, c), px, vec![3]).unwrap();
        assert_eq!(n, 1);
        assert_eq!(ds.image(0), vec![0.0, 1.0, 128.0 / 255.0, 1.0 / 255.0]);
        assert_eq!(ds.label(0), 3);
    }

    #[test]
    fn distinct_diagnostics() {
        let mut bad_magic = encode_idx_images(1, 1, 1, &[0]);
        bad_magic[3] = 0x01;
        let e = parse_idx_images(&bad_magic, p()).unwrap_err().to_string();
        assert!(e.contains("magic mismatch"), "{e}");

        let short = encode_idx_images(2, 2, 2, &[0; 5]);
        let e = parse_idx_images(&short, p()).unwrap_err().to_string();
        assert!(e.contains("truncated"), "{e}");

        let e = parse_idx_labels(&[0, 0, 8], p()).unwrap_err().to_string();
        assert!(e.contains("truncated header"), "{e}");

        let e = parse_idx_labels(&encode_idx_labels(&[1, 12]), p()).unwrap_err().to_string();
        assert!(e.contains("outside"), "{e}");
    }

    #[test]
    fn count_mismatch_between_files() {
        let dir = tempfile::tempdir().unwrap();
        let ip = dir.path().join("i");
        let lp = dir.path().join("l");
        fs::write(&ip, encode_idx_images(2, 1, 1, &[1, 2])).unwrap();
        fs::write(&lp, encode_idx_labels(&[1, 2, 3])).unwrap();
        let e = load_mnist(&ip, &lp, Split::Test).unwrap_err().to_string();
        assert!(e.contains("dimension mismatch"), "{e}");
    }

    proptest! {
        #[test]
        fn synthetic_round_trip(
            rows in 1usize..6,
            cols in 1usize..6,
            labels in proptest::collection::vec(0u8..10, 1..8),
            seed in any::<u64>(),
        ) {
            let n = labels.len();
            let pixels: Vec<u8> = (0..n * rows * cols)
                .map(|i| (seed.wrapping_mul(i as u64 + 1) >> 7) as u8)
                .collect();
            let (n2, r2, c2, px) = parse_idx_images(&encode_idx_images(n, rows, cols, &pixels), p()).unwrap();
            prop_assert_eq!((n2, r2, c2), (n, rows, cols));
            prop_assert_eq!(px, pixels);
            prop_assert_eq!(parse_idx_labels(&encode_idx_labels(&labels), p()).unwrap(), labels);
        }
    }
}
