//! CIFAR binary ingestion.
//!
//! CIFAR-10 records are 3073 bytes: one label byte then 3072 image bytes in
//! channel-planar R,G,B order, each plane 32×32 row-major. CIFAR-100 records
//! carry a coarse and a fine label byte first (3074 bytes); the fine label is
//! used. Pixels are scaled to `[0, 1]`.

use std::fs;
use std::path::Path;

use super::{DataError, Dataset};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

const SIDE: usize = 32;
const PLANE: usize = SIDE * SIDE;
const IMAGE_BYTES: usize = 3 * PLANE;

/// Load CIFAR-10 from a directory holding the published binary batches
/// (`data_batch_1.bin` … `data_batch_5.bin`, `test_batch.bin`). Missing
/// training batches are tolerated as long as at least one is present, so
/// subsets stored in the same layout load too.
pub fn load_cifar10(dir: &Path, split: Split) -> Result<Dataset, DataError> {
    let files: Vec<_> = match split {
        Split::Train => (1..=5)
            .map(|i| dir.join(format!("data_batch_{i}.bin")))
            .filter(|p| p.exists())
            .collect(),
        Split::Test => vec![dir.join("test_batch.bin")],
    };
    if files.is_empty() {
        return Err(DataError::Malformed {
            path: dir.display().to_string(),
            reason: "no data_batch_*.bin files found".into(),
        });
    }
    let mut images = Vec::new();
    let mut labels = Vec::new();
    for file in &files {
        read_batch(file, 1, 10, &mut images, &mut labels)?;
    }
    finish(images, labels, 10)
}

/// Load CIFAR-100 (`train.bin` / `test.bin`; fine labels).
pub fn load_cifar100(dir: &Path, split: Split) -> Result<Dataset, DataError> {
    let file = dir.join(match split {
        Split::Train => "train.bin",
        Split::Test => "test.bin",
    });
    let mut images = Vec::new();
    let mut labels = Vec::new();
    read_batch(&file, 2, 100, &mut images, &mut labels)?;
    finish(images, labels, 100)
}

fn read_batch(
    path: &Path,
    label_bytes: usize,
    class_count: usize,
    images: &mut Vec<f32>,
    labels: &mut Vec<usize>,
) -> Result<(), DataError> {
    let bytes = fs::read(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let record = label_bytes + IMAGE_BYTES;
    if bytes.is_empty() || bytes.len() % record != 0 {
        return Err(DataError::Malformed {
            path: path.display().to_string(),
            reason: format!(
                "file size {} is not a positive multiple of the {record}-byte record",
                bytes.len()
            ),
        });
    }
    images.reserve(bytes.len() / record * IMAGE_BYTES);
    for (i, rec) in bytes.chunks_exact(record).enumerate() {
        // CIFAR-100 records are (coarse, fine); the fine label is the last
        // label byte either way.
        let label = rec[label_bytes - 1] as usize;
        if label >= class_count {
            return Err(DataError::Malformed {
                path: path.display().to_string(),
                reason: format!("record {i}: label {label} exceeds {} classes", class_count),
            });
        }
        labels.push(label);
        let pixels = &rec[label_bytes..];
        // Channel-planar to channels-last.
        for p in 0..PLANE {
            for ch in 0..3 {
                images.push(pixels[ch * PLANE + p] as f32 / 255.0);
            }
        }
    }
    Ok(())
}

fn finish(images: Vec<f32>, labels: Vec<usize>, class_count: usize) -> Result<Dataset, DataError> {
    let n = labels.len();
    let images = Tensor::from_vec(&[n, SIDE, SIDE, 3], images).map_err(|e| DataError::Malformed {
        path: String::new(),
        reason: e.to_string(),
    })?;
    Ok(Dataset::new(images, labels, class_count))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_records(path: &Path, records: &[(Vec<u8>, Vec<u8>)]) {
        let mut f = std::fs::File::create(path).unwrap();
        for (label, pixels) in records {
            f.write_all(label).unwrap();
            f.write_all(pixels).unwrap();
        }
    }

    #[test]
    fn record_arithmetic_matches_published_layout() {
        // 10,000 records of (1 + 3072) bytes.
        assert_eq!(10_000 * (1 + IMAGE_BYTES), 30_730_000);
        // CIFAR-100 adds the coarse label byte.
        assert_eq!(2 + IMAGE_BYTES, 3074);
    }

    #[test]
    fn saturated_pixels_scale_to_one_and_labels_pass_through() {
        let dir = tempfile::tempdir().unwrap();
        write_records(
            &dir.path().join("data_batch_1.bin"),
            &[(vec![7], vec![255u8; IMAGE_BYTES])],
        );
        let ds = load_cifar10(dir.path(), Split::Train).unwrap();
        assert_eq!(ds.len(), 1);
        assert_eq!(ds.labels, vec![7]);
        assert!(ds.images.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn channel_planes_map_to_channels_last() {
        let dir = tempfile::tempdir().unwrap();
        let mut pixels = vec![0u8; IMAGE_BYTES];
        pixels[0] = 10; // R of pixel (0,0)
        pixels[PLANE] = 20; // G of pixel (0,0)
        pixels[2 * PLANE] = 30; // B of pixel (0,0)
        write_records(&dir.path().join("test_batch.bin"), &[(vec![0], pixels)]);
        let ds = load_cifar10(dir.path(), Split::Test).unwrap();
        assert_eq!(ds.images.at(&[0, 0, 0, 0]).unwrap(), 10.0 / 255.0);
        assert_eq!(ds.images.at(&[0, 0, 0, 1]).unwrap(), 20.0 / 255.0);
        assert_eq!(ds.images.at(&[0, 0, 0, 2]).unwrap(), 30.0 / 255.0);
    }

    #[test]
    fn truncated_file_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("data_batch_1.bin"), vec![0u8; 3072]).unwrap();
        assert!(matches!(
            load_cifar10(dir.path(), Split::Train),
            Err(DataError::Malformed { .. })
        ));
    }

    #[test]
    fn label_range_is_enforced() {
        let dir = tempfile::tempdir().unwrap();
        write_records(
            &dir.path().join("data_batch_1.bin"),
            &[(vec![10], vec![0u8; IMAGE_BYTES])],
        );
        assert!(load_cifar10(dir.path(), Split::Train).is_err());
    }

    #[test]
    fn cifar100_uses_fine_labels() {
        let dir = tempfile::tempdir().unwrap();
        write_records(
            &dir.path().join("train.bin"),
            &[(vec![3, 99], vec![0u8; IMAGE_BYTES])],
        );
        let ds = load_cifar100(dir.path(), Split::Train).unwrap();
        assert_eq!(ds.labels, vec![99]);
        assert_eq!(ds.class_count, 100);

        write_records(
            &dir.path().join("test.bin"),
            &[(vec![3, 100], vec![0u8; IMAGE_BYTES])],
        );
        assert!(load_cifar100(dir.path(), Split::Test).is_err());
    }
}
