//! IDX-format ingestion (the MNIST container): big-endian headers with magic
//! 0x00000803 for image files and 0x00000801 for label files.

use std::fs;
use std::path::Path;

use super::{DataError, Dataset};
use crate::tensor::Tensor;

const IMAGES_MAGIC: u32 = 0x0000_0803;
const LABELS_MAGIC: u32 = 0x0000_0801;

pub fn load_mnist_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset, DataError> {
    let img_bytes = fs::read(images_path).map_err(|source| DataError::Io {
        path: images_path.display().to_string(),
        source,
    })?;
    let lbl_bytes = fs::read(labels_path).map_err(|source| DataError::Io {
        path: labels_path.display().to_string(),
        source,
    })?;

    let img_name = images_path.display().to_string();
    let lbl_name = labels_path.display().to_string();

    if img_bytes.len() < 16 {
        return Err(malformed(&img_name, "image header shorter than 16 bytes"));
    }
    if read_u32(&img_bytes, 0) != IMAGES_MAGIC {
        return Err(malformed(
            &img_name,
            &format!("bad image magic {:#010x}", read_u32(&img_bytes, 0)),
        ));
    }
    let count = read_u32(&img_bytes, 4) as usize;
    let rows = read_u32(&img_bytes, 8) as usize;
    let cols = read_u32(&img_bytes, 12) as usize;
    if img_bytes.len() != 16 + count * rows * cols {
        return Err(malformed(
            &img_name,
            &format!(
                "payload {} bytes, header promises {}",
                img_bytes.len() - 16,
                count * rows * cols
            ),
        ));
    }

    if lbl_bytes.len() < 8 {
        return Err(malformed(&lbl_name, "label header shorter than 8 bytes"));
    }
    if read_u32(&lbl_bytes, 0) != LABELS_MAGIC {
        return Err(malformed(
            &lbl_name,
            &format!("bad label magic {:#010x}", read_u32(&lbl_bytes, 0)),
        ));
    }
    let label_count = read_u32(&lbl_bytes, 4) as usize;
    if label_count != count {
        return Err(malformed(
            &lbl_name,
            &format!("{label_count} labels for {count} images"),
        ));
    }
    if lbl_bytes.len() != 8 + label_count {
        return Err(malformed(&lbl_name, "label payload size mismatch"));
    }

    let images: Vec<f32> = img_bytes[16..].iter().map(|&b| b as f32 / 255.0).collect();
    let labels: Vec<usize> = lbl_bytes[8..].iter().map(|&b| b as usize).collect();
    if let Some(&bad) = labels.iter().find(|&&l| l > 9) {
        return Err(malformed(&lbl_name, &format!("label {bad} exceeds 9")));
    }
    let images =
        Tensor::from_vec(&[count, rows, cols, 1], images).map_err(|e| malformed(&img_name, &e.to_string()))?;
    Ok(Dataset::new(images, labels, 10))
}

fn read_u32(bytes: &[u8], off: usize) -> u32 {
    u32::from_be_bytes([bytes[off], bytes[off + 1], bytes[off + 2], bytes[off + 3]])
}

fn malformed(path: &str, reason: &str) -> DataError {
    DataError::Malformed {
        path: path.into(),
        reason: reason.into(),
    }
}
