//! Dataset ingestion, augmentation, the model-config text format, checkpoint
//! serialization, and dense-to-factorized model conversion.

mod augment;
mod checkpoint;
mod cifar;
pub mod config;
mod convert;
mod mnist;

pub use augment::augment_image;
pub use checkpoint::{checkpoint_from_network, load_checkpoint, network_from_checkpoint,
    save_checkpoint, Checkpoint, CHECKPOINT_VERSION};
pub use cifar::{load_cifar10, load_cifar100, Split};
pub use config::{parse_model_config, ModelConfig};
pub use convert::{convert_cnn_to_mlconv, LayerFit};
pub use mnist::load_mnist_idx;

use thiserror::Error;

use crate::tensor::Tensor;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {reason}")]
    Malformed { path: String, reason: String },
    #[error("config parse error at line {line}: {reason}")]
    ConfigParse { line: usize, reason: String },
    #[error("config invalid at layer {layer}: {reason}")]
    ConfigInvalid { layer: usize, reason: String },
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("conversion error: {0}")]
    Convert(String),
}

/// An in-memory labelled image set; pixels are scaled to `[0, 1]` and no
/// other preprocessing is applied.
#[derive(Debug, Clone)]
pub struct Dataset {
    /// `(num_samples, H, W, C)`.
    pub images: Tensor<f32>,
    pub labels: Vec<usize>,
    pub class_count: usize,
}

impl Dataset {
    pub fn new(images: Tensor<f32>, labels: Vec<usize>, class_count: usize) -> Self {
        assert_eq!(
            images.shape()[0],
            labels.len(),
            "image count must equal label count"
        );
        assert!(
            labels.iter().all(|&l| l < class_count),
            "labels must be below the class count"
        );
        Dataset {
            images,
            labels,
            class_count,
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Keep the samples selected by a seeded permutation, in permuted order.
    pub fn subset_seeded(&self, count: usize, seed: u64) -> Dataset {
        use rand::seq::SliceRandom;
        use rand_chacha::rand_core::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut ids: Vec<usize> = (0..self.len()).collect();
        ids.shuffle(&mut rng);
        ids.truncate(count.min(self.len()));
        self.select(&ids)
    }

    pub fn select(&self, ids: &[usize]) -> Dataset {
        let (h, w, c) = (
            self.images.shape()[1],
            self.images.shape()[2],
            self.images.shape()[3],
        );
        let sample_len = h * w * c;
        let mut data = Vec::with_capacity(ids.len() * sample_len);
        let mut labels = Vec::with_capacity(ids.len());
        for &id in ids {
            data.extend_from_slice(&self.images.data()[id * sample_len..(id + 1) * sample_len]);
            labels.push(self.labels[id]);
        }
        Dataset {
            images: Tensor::from_vec(&[ids.len(), h, w, c], data).expect("subset shape"),
            labels,
            class_count: self.class_count,
        }
    }
}
