//! Big-endian IDX files (the MNIST container format).

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::Matrix;

use super::data::labels_to_one_hot;

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;
const CLASSES: usize = 10;

fn read_u32(bytes: &[u8], at: usize, path: &Path) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Truncated {
            path: path.to_path_buf(),
            expected: at + 4,
            found: bytes.len(),
        })
}

fn check_magic(bytes: &[u8], expected: u32, path: &Path) -> Result<()> {
    let found = read_u32(bytes, 0, path)?;
    if found != expected {
        return Err(Error::BadMagic {
            path: path.to_path_buf(),
            expected,
            found,
        });
    }
    Ok(())
}

fn body<'a>(bytes: &'a [u8], header: usize, len: usize, path: &Path) -> Result<&'a [u8]> {
    bytes.get(header..header + len).ok_or_else(|| Error::Truncated {
        path: path.to_path_buf(),
        expected: header + len,
        found: bytes.len(),
    })
}

/// Reads an image file and its label file. Pixels are scaled to `[0, 1]`,
/// labels become one-hot rows over 10 classes.
pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<(Matrix, Matrix)> {
    let (ip, lp) = (images_path.as_ref(), labels_path.as_ref());
    let images = fs::read(ip)?;
    let labels = fs::read(lp)?;

    check_magic(&images, IMAGES_MAGIC, ip)?;
    let n = read_u32(&images, 4, ip)? as usize;
    let rows = read_u32(&images, 8, ip)? as usize;
    let cols = read_u32(&images, 12, ip)? as usize;
    let d = rows * cols;
    let pixels = body(&images, 16, n * d, ip)?;

    check_magic(&labels, LABELS_MAGIC, lp)?;
    let n_labels = read_u32(&labels, 4, lp)? as usize;
    if n_labels != n {
        return Err(Error::CountMismatch {
            images: n,
            labels: n_labels,
        });
    }
    let raw_labels = body(&labels, 8, n, lp)?;

    let x = Matrix::from_vec(n, d, pixels.iter().map(|&p| f64::from(p) / 255.0).collect())?;
    let label_idx: Vec<usize> = raw_labels.iter().map(|&l| l as usize).collect();
    let t = labels_to_one_hot(&label_idx, CLASSES)?;
    Ok((x, t))
}
