//! Leaky ReLU and the softmax cross-entropy head.

use crate::scalar::Scalar;
use crate::tensor::{ShapeError, Tensor};

pub fn lrelu<T: Scalar>(x: &Tensor<T>, alpha: T) -> Tensor<T> {
    let mut y = x.clone();
    for v in y.data_mut() {
        if *v < T::zero() {
            *v *= alpha;
        }
    }
    y
}

/// Gradient uses the forward input's sign; slope is `alpha` on the negative
/// side (including exactly zero on the positive branch convention: x ≥ 0 → 1).
pub fn lrelu_backward<T: Scalar>(x: &Tensor<T>, alpha: T, dy: &Tensor<T>) -> Tensor<T> {
    let mut dx = dy.clone();
    for (d, &v) in dx.data_mut().iter_mut().zip(x.data()) {
        if v < T::zero() {
            *d *= alpha;
        }
    }
    dx
}

/// Numerically stable softmax with cross-entropy loss for one sample.
/// Returns `(loss, probabilities)`; the label must be a valid class index.
pub fn softmax_xent<T: Scalar>(logits: &[T], label: usize) -> Result<(T, Vec<T>), ShapeError> {
    if label >= logits.len() {
        return Err(ShapeError::DimMismatch(format!(
            "label {label} out of range for {} classes",
            logits.len()
        )));
    }
    let max = logits
        .iter()
        .copied()
        .fold(T::neg_infinity(), |a, b| if b > a { b } else { a });
    let mut sum = T::zero();
    let mut probs: Vec<T> = logits.iter().map(|&z| (z - max).exp()).collect();
    for &p in &probs {
        sum += p;
    }
    for p in probs.iter_mut() {
        *p /= sum;
    }
    let loss = -(logits[label] - max - sum.ln());
    Ok((loss, probs))
}

/// Mean loss over a `(B, K)` logit batch plus the logit gradient
/// `(probs − onehot)/B`.
pub fn softmax_xent_batch<T: Scalar>(
    logits: &Tensor<T>,
    labels: &[usize],
) -> Result<(f64, Tensor<T>), ShapeError> {
    let (b, k) = (logits.shape()[0], logits.shape()[1]);
    assert_eq!(b, labels.len(), "one label per sample");
    let mut dlogits = Tensor::zeros(logits.shape());
    let mut total = 0.0f64;
    let inv_b = T::from_f64(1.0 / b as f64);
    for (i, (&label, row)) in labels.iter().zip(logits.data().chunks_exact(k)).enumerate() {
        let (loss, probs) = softmax_xent(row, label)?;
        total += loss.to_f64();
        let drow = &mut dlogits.data_mut()[i * k..(i + 1) * k];
        for (d, &p) in drow.iter_mut().zip(&probs) {
            *d = p * inv_b;
        }
        drow[label] -= inv_b;
    }
    Ok((total / b as f64, dlogits))
}
