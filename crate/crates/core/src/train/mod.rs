//! Optimizers, learning-rate schedules, regularizers, and the training loop.
//!
//! Everything is deterministic for a fixed seed: shuffling, augmentation and
//! dropout draw from one seeded stream in a fixed order, and every gradient
//! reduction runs in a fixed sequence regardless of thread count.

mod optim;

pub use optim::{adam_update, sgd_momentum_update, OptimizerKind, OptimizerState};

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::data::{augment_image, Dataset};
use crate::layers::{softmax_xent_batch, Network, Phase};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("loss diverged to NaN at epoch {epoch}, step {step}")]
    Diverged { epoch: usize, step: usize },
    #[error("training config invalid: {0}")]
    BadConfig(String),
    #[error("model expects {expected} channels/classes, dataset has {actual}")]
    DataMismatch { expected: usize, actual: usize },
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub optimizer: OptimizerKind,
    /// `(learning rate, epoch span)` pairs; rates must strictly decrease.
    /// The last rate holds for any epochs beyond the listed spans.
    pub schedule: Vec<(f64, usize)>,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub weight_decay: f64,
    pub max_norm_radius: Option<f64>,
    pub dropout_input: f64,
    pub dropout_pool: f64,
    pub seed: u64,
    pub augment_flip: bool,
    pub max_translate_px: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            optimizer: OptimizerKind::Adam {
                beta1: 0.9,
                beta2: 0.999,
                eps: 1e-8,
            },
            schedule: vec![(0.01, 40), (0.001, 40), (0.0001, 40)],
            batch_size: 200,
            max_epochs: 100,
            weight_decay: 0.0,
            max_norm_radius: None,
            dropout_input: 0.0,
            dropout_pool: 0.0,
            seed: 0,
            augment_flip: false,
            max_translate_px: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.batch_size == 0 {
            return Err(TrainError::BadConfig("batch size must be ≥ 1".into()));
        }
        if self.schedule.is_empty() {
            return Err(TrainError::BadConfig("schedule must not be empty".into()));
        }
        for pair in self.schedule.windows(2) {
            if pair[1].0 >= pair[0].0 {
                return Err(TrainError::BadConfig(
                    "schedule learning rates must strictly decrease".into(),
                ));
            }
        }
        if !(0.0..1.0).contains(&self.dropout_input) || !(0.0..1.0).contains(&self.dropout_pool) {
            return Err(TrainError::BadConfig("dropout must lie in [0, 1)".into()));
        }
        if let Some(r) = self.max_norm_radius {
            if !(r > 0.0) {
                return Err(TrainError::BadConfig("max-norm radius must be > 0".into()));
            }
        }
        if !(self.weight_decay >= 0.0) {
            return Err(TrainError::BadConfig("weight decay must be ≥ 0".into()));
        }
        Ok(())
    }
}

/// Piecewise-constant rate lookup; clamps at the final value.
pub fn schedule_lr(schedule: &[(f64, usize)], epoch: usize) -> f64 {
    assert!(!schedule.is_empty(), "schedule must not be empty");
    let mut boundary = 0;
    for &(lr, span) in schedule {
        boundary += span;
        if epoch < boundary {
            return lr;
        }
    }
    schedule.last().unwrap().0
}

/// `grads += λ · params`, the L2 penalty gradient.
pub fn apply_weight_decay<T: Scalar>(grads: &mut [T], params: &[T], lambda: f64) {
    if lambda == 0.0 {
        return;
    }
    let l = T::from_f64(lambda);
    for (g, &p) in grads.iter_mut().zip(params) {
        *g += l * p;
    }
}

/// Inverted dropout: zero with probability `p`, scale survivors by 1/(1−p).
/// Inference mode is the identity. The mask of applied factors is returned
/// for the backward pass.
pub fn dropout<T: Scalar>(
    x: &Tensor<T>,
    p: f64,
    training: bool,
    rng: &mut ChaCha8Rng,
) -> (Tensor<T>, Vec<T>) {
    assert!((0.0..1.0).contains(&p), "dropout rate must lie in [0, 1)");
    if !training || p == 0.0 {
        return (x.clone(), vec![T::one(); x.len()]);
    }
    let scale = T::from_f64(1.0 / (1.0 - p));
    let mut y = x.clone();
    let mut mask = vec![T::zero(); x.len()];
    for (v, m) in y.data_mut().iter_mut().zip(mask.iter_mut()) {
        if rng.gen::<f64>() < p {
            *v = T::zero();
        } else {
            *v *= scale;
            *m = scale;
        }
    }
    (y, mask)
}

/// One row of the metrics log.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    /// Error rates as percentages.
    pub train_err: f64,
    pub test_err: f64,
    pub wall_seconds: f64,
}

pub const METRICS_CSV_HEADER: &str = "epoch,lr,train_loss,train_err,test_err,wall_seconds";

pub fn metrics_to_csv(metrics: &[EpochMetrics]) -> String {
    let mut out = String::from(METRICS_CSV_HEADER);
    out.push('\n');
    for m in metrics {
        out.push_str(&format!(
            "{},{},{:.6},{:.4},{:.4},{:.3}\n",
            m.epoch, m.lr, m.train_loss, m.train_err, m.test_err, m.wall_seconds
        ));
    }
    out
}

/// Hook called after every optimizer step (and max-norm sweep).
pub type StepObserver<'a, T> = &'a mut dyn FnMut(&Network<T>, usize);

/// Train `net` in place; returns the per-epoch metrics log.
///
/// Epoch structure: seeded shuffle, per-sample augmentation, forward in
/// training mode, softmax cross-entropy, backward, weight decay, optimizer
/// step, optional max-norm sweep.
pub fn train<T: Scalar>(
    net: &mut Network<T>,
    train_data: &Dataset,
    test_data: &Dataset,
    cfg: &TrainConfig,
    mut observer: Option<StepObserver<'_, T>>,
) -> Result<Vec<EpochMetrics>, TrainError> {
    cfg.validate()?;
    if train_data.class_count != net.class_count {
        return Err(TrainError::DataMismatch {
            expected: net.class_count,
            actual: train_data.class_count,
        });
    }
    if train_data.images.shape()[3] != net.input_shape[2] {
        return Err(TrainError::DataMismatch {
            expected: net.input_shape[2],
            actual: train_data.images.shape()[3],
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt_state = OptimizerState::for_network(net);
    let n_train = train_data.len();
    let mut indices: Vec<usize> = (0..n_train).collect();
    let mut metrics = Vec::with_capacity(cfg.max_epochs);
    let mut step = 0usize;

    for epoch in 0..cfg.max_epochs {
        let start = Instant::now();
        let lr = schedule_lr(&cfg.schedule, epoch);
        indices.shuffle(&mut rng);

        let mut loss_sum = 0.0f64;
        let mut batches = 0usize;
        let mut train_wrong = 0usize;
        let mut train_seen = 0usize;

        for batch_ids in indices.chunks(cfg.batch_size) {
            let (batch, labels) = assemble_batch(train_data, batch_ids, cfg, &mut rng);
            let batch = if cfg.dropout_input > 0.0 {
                dropout(&batch, cfg.dropout_input, true, &mut rng).0
            } else {
                batch
            };

            let tape = net.forward(&batch, Phase::Train, Some(&mut rng));
            let logits = tape.logits();
            let (loss, dlogits) = softmax_xent_batch(logits, &labels)
                .map_err(|e| TrainError::BadConfig(e.to_string()))?;
            if !loss.is_finite() {
                return Err(TrainError::Diverged { epoch, step });
            }
            loss_sum += loss;
            batches += 1;
            train_wrong += count_wrong(logits, &labels);
            train_seen += labels.len();

            net.update_running_stats(&tape);
            let (mut grads, _) = net.backward(&tape, &dlogits);
            drop(tape);

            if cfg.weight_decay > 0.0 {
                let mut flat: Vec<&mut Tensor<T>> =
                    grads.layers.iter_mut().flatten().collect();
                let mut i = 0;
                net.visit_params(&mut |p| {
                    apply_weight_decay(flat[i].data_mut(), p.data(), cfg.weight_decay);
                    i += 1;
                });
            }
            opt_state.step(net, &grads, &cfg.optimizer, lr);
            if let Some(r) = cfg.max_norm_radius {
                net.apply_max_norm(r);
            }
            step += 1;
            if let Some(obs) = observer.as_mut() {
                obs(net, step);
            }
        }

        let test_err = evaluate_error(net, test_data);
        metrics.push(EpochMetrics {
            epoch,
            lr,
            train_loss: loss_sum / batches.max(1) as f64,
            train_err: 100.0 * train_wrong as f64 / train_seen.max(1) as f64,
            test_err,
            wall_seconds: start.elapsed().as_secs_f64(),
        });
    }
    Ok(metrics)
}

/// Classification error (%) of `net` on a dataset, in inference mode.
pub fn evaluate_error<T: Scalar>(net: &Network<T>, data: &Dataset) -> f64 {
    100.0 * (1.0 - evaluate_accuracy_counts(net, data).iter().sum::<usize>() as f64
        / data.len() as f64)
}

/// Correct-prediction counts per class, inference mode, batched.
pub fn evaluate_accuracy_counts<T: Scalar>(net: &Network<T>, data: &Dataset) -> Vec<usize> {
    let mut correct = vec![0usize; data.class_count];
    let chunk = 200usize;
    let ids: Vec<usize> = (0..data.len()).collect();
    for batch_ids in ids.chunks(chunk) {
        let (batch, labels) = copy_batch::<T>(data, batch_ids);
        let logits = net.forward_eval(&batch);
        let k = logits.shape()[1];
        for (row, &label) in logits.data().chunks_exact(k).zip(&labels) {
            if argmax(row) == label {
                correct[label] += 1;
            }
        }
    }
    correct
}

/// Per-class sample counts of a dataset.
pub fn class_counts(data: &Dataset) -> Vec<usize> {
    let mut counts = vec![0usize; data.class_count];
    for &l in &data.labels {
        counts[l] += 1;
    }
    counts
}

fn count_wrong<T: Scalar>(logits: &Tensor<T>, labels: &[usize]) -> usize {
    let k = logits.shape()[1];
    logits
        .data()
        .chunks_exact(k)
        .zip(labels)
        .filter(|(row, &&ref label)| argmax(row) != *label)
        .count()
}

fn argmax<T: Scalar>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Gather and augment one batch into a `(B, H, W, C)` tensor.
fn assemble_batch<T: Scalar>(
    data: &Dataset,
    ids: &[usize],
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> (Tensor<T>, Vec<usize>) {
    let (h, w, c) = (
        data.images.shape()[1],
        data.images.shape()[2],
        data.images.shape()[3],
    );
    let sample_len = h * w * c;
    let mut out = Tensor::zeros(&[ids.len(), h, w, c]);
    let mut labels = Vec::with_capacity(ids.len());
    let augmenting = cfg.augment_flip || cfg.max_translate_px > 0;
    for (i, &id) in ids.iter().enumerate() {
        let src = &data.images.data()[id * sample_len..(id + 1) * sample_len];
        let dst = &mut out.data_mut()[i * sample_len..(i + 1) * sample_len];
        if augmenting {
            let img = Tensor::from_vec(&[h, w, c], src.to_vec()).expect("sample shape");
            let aug = augment_image(&img, rng, cfg.augment_flip, cfg.max_translate_px);
            for (d, &s) in dst.iter_mut().zip(aug.data()) {
                *d = T::from_f64(s as f64);
            }
        } else {
            for (d, &s) in dst.iter_mut().zip(src) {
                *d = T::from_f64(s as f64);
            }
        }
        labels.push(data.labels[id]);
    }
    (out, labels)
}

fn copy_batch<T: Scalar>(data: &Dataset, ids: &[usize]) -> (Tensor<T>, Vec<usize>) {
    let (h, w, c) = (
        data.images.shape()[1],
        data.images.shape()[2],
        data.images.shape()[3],
    );
    let sample_len = h * w * c;
    let mut out = Tensor::zeros(&[ids.len(), h, w, c]);
    let mut labels = Vec::with_capacity(ids.len());
    for (i, &id) in ids.iter().enumerate() {
        let src = &data.images.data()[id * sample_len..(id + 1) * sample_len];
        let dst = &mut out.data_mut()[i * sample_len..(i + 1) * sample_len];
        for (d, &s) in dst.iter_mut().zip(src) {
            *d = T::from_f64(s as f64);
        }
        labels.push(data.labels[id]);
    }
    (out, labels)
}

#[cfg(test)]
mod tests;
