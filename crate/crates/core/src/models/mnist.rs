//! IDX reader for MNIST-format files.
//!
//! Header: big-endian `u32` magic (`0x00000803` images, `0x00000801` labels),
//! then one big-endian `u32` per dimension, then raw `u8` payload.

use std::path::Path;

use crate::error::{Error, Result};
use crate::models::LabeledExample;

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;

fn be_u32(bytes: &[u8], at: usize, what: &str) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Format(format!("{what}: truncated header")))
}

/// Images scaled to `[0, 1]`, plus `(rows, cols)`.
pub fn parse_idx_images(bytes: &[u8]) -> Result<(Vec<Vec<f64>>, usize, usize)> {
    let magic = be_u32(bytes, 0, "images")?;
    if magic != IMAGE_MAGIC {
        return Err(Error::Format(format!("images: magic {magic:#010x}, expected {IMAGE_MAGIC:#010x}")));
    }
    let n = be_u32(bytes, 4, "images")? as usize;
    let rows = be_u32(bytes, 8, "images")? as usize;
    let cols = be_u32(bytes, 12, "images")? as usize;
    let size = rows * cols;
    let payload = &bytes[16..];
    if payload.len() < n * size {
        return Err(Error::Format(format!(
            "images: truncated payload, {} bytes for {n} images of {rows}x{cols}",
            payload.len()
        )));
    }
    let images = payload[..n * size]
        .chunks_exact(size.max(1))
        .take(n)
        .map(|px| px.iter().map(|&b| b as f64 / 255.0).collect())
        .collect();
    Ok((images, rows, cols))
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    let magic = be_u32(bytes, 0, "labels")?;
    if magic != LABEL_MAGIC {
        return Err(Error::Format(format!("labels: magic {magic:#010x}, expected {LABEL_MAGIC:#010x}")));
    }
    let n = be_u32(bytes, 4, "labels")? as usize;
    let payload = &bytes[8..];
    if payload.len() < n {
        return Err(Error::Format(format!("labels: truncated payload, {} bytes for {n} labels", payload.len())));
    }
    let labels = payload[..n].to_vec();
    if let Some(bad) = labels.iter().find(|&&l| l > 9) {
        return Err(Error::Format(format!("labels: value {bad} outside 0..=9")));
    }
    Ok(labels)
}

pub fn load_mnist_idx(image_path: &Path, label_path: &Path) -> Result<Vec<LabeledExample>> {
    let (images, _, _) = parse_idx_images(&std::fs::read(image_path)?)?;
    let labels = parse_idx_labels(&std::fs::read(label_path)?)?;
    if images.len() != labels.len() {
        return Err(Error::Consistency(format!("{} images but {} labels", images.len(), labels.len())));
    }
    Ok(images.into_iter().zip(labels).map(|(x, y)| LabeledExample::classification(x, y as usize)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn image_bytes(n: u32, rows: u32, cols: u32, fill: impl Fn(usize) -> u8) -> Vec<u8> {
        let mut b = IMAGE_MAGIC.to_be_bytes().to_vec();
        for v in [n, rows, cols] {
            b.extend(v.to_be_bytes());
        }
        b.extend((0..(n * rows * cols) as usize).map(fill));
        b
    }

    fn label_bytes(labels: &[u8]) -> Vec<u8> {
        let mut b = LABEL_MAGIC.to_be_bytes().to_vec();
        b.extend((labels.len() as u32).to_be_bytes());
        b.extend(labels);
        b
    }

    #[test]
    fn parses_images_and_scales() {
        let bytes = image_bytes(3, 2, 2, |i| (i * 20) as u8);
        let (imgs, r, c) = parse_idx_images(&bytes).unwrap();
        assert_eq!((imgs.len(), r, c), (3, 2, 2));
        assert_eq!(imgs[0], vec![0.0, 20.0 / 255.0, 40.0 / 255.0, 60.0 / 255.0]);
        assert!(imgs.iter().flatten().all(|&x| (0.0..=1.0).contains(&x)));
    }

    #[test]
    fn full_size_header() {
        let mut bytes = IMAGE_MAGIC.to_be_bytes().to_vec();
        for v in [60000u32, 28, 28] {
            bytes.extend(v.to_be_bytes());
        }
        bytes.resize(16 + 60000 * 784, 0);
        let (imgs, _, _) = parse_idx_images(&bytes).unwrap();
        assert_eq!(imgs.len(), 60000);
        assert_eq!(imgs[59999].len(), 784);
    }

    #[test]
    fn wrong_magic_and_truncation() {
        let labels = label_bytes(&[1, 2, 3]);
        assert!(matches!(parse_idx_images(&labels), Err(Error::Format(_))));
        let images = image_bytes(2, 2, 2, |_| 0);
        assert!(matches!(parse_idx_labels(&images), Err(Error::Format(_))));
        assert!(matches!(parse_idx_images(&images[..images.len() - 1]), Err(Error::Format(_))));
        assert!(matches!(parse_idx_images(&images[..10]), Err(Error::Format(_))));
        assert!(matches!(parse_idx_labels(&labels[..9]), Err(Error::Format(_))));
        assert!(matches!(parse_idx_labels(&label_bytes(&[10])), Err(Error::Format(_))));
    }

    #[test]
    fn count_mismatch_is_consistency_error() {
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = (dir.path().join("img"), dir.path().join("lbl"));
        std::fs::write(&ip, image_bytes(2, 2, 2, |_| 7)).unwrap();
        std::fs::write(&lp, label_bytes(&[4, 9, 1])).unwrap();
        assert!(matches!(load_mnist_idx(&ip, &lp), Err(Error::Consistency(_))));
        std::fs::write(&lp, label_bytes(&[4, 9])).unwrap();
        let data = load_mnist_idx(&ip, &lp).unwrap();
        assert_eq!(data.iter().map(|e| e.label()).collect::<Vec<_>>(), vec![4, 9]);
        assert!(matches!(load_mnist_idx(&dir.path().join("missing"), &lp), Err(Error::Io(_))));
    }
}
