//! Network layers and their composition.
//!
//! Activations flow through the stack as `(B, H, W, N)` tensors — batch,
//! height, width, channels — so the channel axis of a patch lines up with the
//! third factor mode of a multilinear filter. Forward and backward passes are
//! pure given `(parameters, input)`; the only mutation (batch-norm running
//! statistics) happens in an explicit separate step between forward and
//! backward. Shape errors at the public entry points are validated when a
//! model is built; the per-layer kernels treat violations as programmer error.

pub mod activation;
pub mod conv;
pub mod lrconv;
pub mod mlconv;
pub mod norm;
pub mod pool;

pub use activation::{lrelu, lrelu_backward, softmax_xent, softmax_xent_batch};
pub use conv::ConvKernelBank;
pub use lrconv::LRConvBank;
pub use mlconv::{ComputeScheme, MLconvBank, MlSeparableCache};
pub use norm::{BatchNormState, BnCache};
pub use pool::{global_avg_pool, global_avg_pool_backward, maxpool2x2, maxpool2x2_backward};

use rand_chacha::ChaCha8Rng;

use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Whether a pass uses training behaviour (batch statistics, live dropout).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Train,
    Eval,
}

#[derive(Debug, Clone)]
pub enum Layer<T: Scalar> {
    Conv(ConvKernelBank<T>),
    MLconv(MLconvBank<T>),
    LRConv(LRConvBank<T>),
    BatchNorm(BatchNormState<T>),
    LRelu { alpha: T },
    MaxPool,
    GlobalAvgPool,
    Dropout { p: f64 },
}

/// Per-layer state captured by a forward pass for the matching backward.
#[derive(Debug, Clone)]
pub enum LayerCache<T: Scalar> {
    None,
    MLconv(Option<MlSeparableCache<T>>),
    LRConv(Tensor<T>),
    BatchNorm(BnCache<T>),
    MaxPool(Vec<u32>),
    /// Per-element pass-through factors (0 or 1/(1−p)).
    Dropout(Vec<T>),
}

impl<T: Scalar> Layer<T> {
    pub fn kind_name(&self) -> &'static str {
        match self {
            Layer::Conv(_) => "conv",
            Layer::MLconv(_) => "mlconv",
            Layer::LRConv(_) => "lrconv",
            Layer::BatchNorm(_) => "bn",
            Layer::LRelu { .. } => "lrelu",
            Layer::MaxPool => "maxpool",
            Layer::GlobalAvgPool => "gap",
            Layer::Dropout { .. } => "dropout",
        }
    }

    pub fn forward(
        &self,
        x: &Tensor<T>,
        phase: Phase,
        rng: Option<&mut ChaCha8Rng>,
    ) -> (Tensor<T>, LayerCache<T>) {
        match self {
            Layer::Conv(bank) => (bank.forward(x), LayerCache::None),
            Layer::MLconv(bank) => {
                let (y, cache) = bank.forward(x);
                (y, LayerCache::MLconv(cache))
            }
            Layer::LRConv(bank) => {
                let (y, mid) = bank.forward(x);
                (y, LayerCache::LRConv(mid))
            }
            Layer::BatchNorm(bn) => {
                let (y, cache) = bn.forward(x, phase == Phase::Train);
                (y, LayerCache::BatchNorm(cache))
            }
            Layer::LRelu { alpha } => (lrelu(x, *alpha), LayerCache::None),
            Layer::MaxPool => {
                let (y, arg) = maxpool2x2(x);
                (y, LayerCache::MaxPool(arg))
            }
            Layer::GlobalAvgPool => (global_avg_pool(x), LayerCache::None),
            Layer::Dropout { p } => {
                if phase == Phase::Train && *p > 0.0 {
                    let rng = rng.expect("dropout in training mode needs an rng");
                    let (y, mask) = crate::train::dropout(x, *p, true, rng);
                    (y, LayerCache::Dropout(mask))
                } else {
                    (x.clone(), LayerCache::None)
                }
            }
        }
    }

    /// Input gradient plus parameter gradients, ordered as
    /// [`Layer::visit_params`] visits the parameters.
    pub fn backward(
        &self,
        x: &Tensor<T>,
        cache: &LayerCache<T>,
        dy: &Tensor<T>,
    ) -> (Tensor<T>, Vec<Tensor<T>>) {
        match (self, cache) {
            (Layer::Conv(bank), _) => {
                let (dx, dw, db) = bank.backward(x, dy);
                (dx, vec![dw, db])
            }
            (Layer::MLconv(bank), LayerCache::MLconv(cache)) => {
                let (dx, factor_grads, db) = bank.backward(x, cache.as_ref(), dy);
                let mut grads = Vec::with_capacity(3 * factor_grads.len() + 1);
                for [g1, g2, g3] in factor_grads {
                    grads.push(g1);
                    grads.push(g2);
                    grads.push(g3);
                }
                grads.push(db);
                (dx, grads)
            }
            (Layer::LRConv(bank), LayerCache::LRConv(mid)) => {
                let (dx, dv, dh, db) = bank.backward(x, mid, dy);
                (dx, vec![dv, dh, db])
            }
            (Layer::BatchNorm(bn), LayerCache::BatchNorm(cache)) => {
                let (dx, dg, db) = bn.backward(x, cache, dy);
                (dx, vec![dg, db])
            }
            (Layer::LRelu { alpha }, _) => (lrelu_backward(x, *alpha, dy), vec![]),
            (Layer::MaxPool, LayerCache::MaxPool(arg)) => {
                (maxpool2x2_backward(x.shape(), arg, dy), vec![])
            }
            (Layer::GlobalAvgPool, _) => (global_avg_pool_backward(x.shape(), dy), vec![]),
            (Layer::Dropout { .. }, LayerCache::Dropout(mask)) => {
                let mut dx = dy.clone();
                for (d, &m) in dx.data_mut().iter_mut().zip(mask) {
                    *d *= m;
                }
                (dx, vec![])
            }
            (Layer::Dropout { .. }, LayerCache::None) => (dy.clone(), vec![]),
            (layer, _) => panic!("cache does not match layer {}", layer.kind_name()),
        }
    }

    /// Visit learnable parameters in a fixed order (running statistics are
    /// not learnable and are skipped).
    pub fn visit_params<'a>(&'a self, f: &mut impl FnMut(&'a Tensor<T>)) {
        match self {
            Layer::Conv(b) => {
                f(&b.weights);
                f(&b.bias);
            }
            Layer::MLconv(b) => {
                for filter in &b.filters {
                    f(filter.factor(0));
                    f(filter.factor(1));
                    f(filter.factor(2));
                }
                f(&b.bias);
            }
            Layer::LRConv(b) => {
                f(&b.vertical);
                f(&b.horizontal);
                f(&b.bias);
            }
            Layer::BatchNorm(b) => {
                f(&b.gamma);
                f(&b.beta);
            }
            _ => {}
        }
    }

    pub fn visit_params_mut(&mut self, f: &mut impl FnMut(&mut Tensor<T>)) {
        match self {
            Layer::Conv(b) => {
                f(&mut b.weights);
                f(&mut b.bias);
            }
            Layer::MLconv(b) => {
                for filter in &mut b.filters {
                    f(filter.factor_mut(0));
                    f(filter.factor_mut(1));
                    f(filter.factor_mut(2));
                }
                f(&mut b.bias);
            }
            Layer::LRConv(b) => {
                f(&mut b.vertical);
                f(&mut b.horizontal);
                f(&mut b.bias);
            }
            Layer::BatchNorm(b) => {
                f(&mut b.gamma);
                f(&mut b.beta);
            }
            _ => {}
        }
    }

    /// Clamp each filter's parameter vector onto the L2 ball of `radius`.
    ///
    /// Filters: one dense kernel for conv, the concatenation of the R factor
    /// triplets for a multilinear filter, one vertical (per map) or
    /// horizontal (per output) kernel for the low-rank layer. Biases and
    /// normalization parameters are not filters.
    pub fn apply_max_norm(&mut self, radius: f64) {
        match self {
            Layer::Conv(b) => {
                let (d0, d1, c, n) = (
                    b.weights.shape()[0],
                    b.weights.shape()[1],
                    b.weights.shape()[2],
                    b.weights.shape()[3],
                );
                let per = d0 * d1 * c;
                let data = b.weights.data_mut();
                for fi in 0..n {
                    let mut sq = 0.0f64;
                    for e in 0..per {
                        sq += data[e * n + fi].to_f64().powi(2);
                    }
                    let norm = sq.sqrt();
                    if norm > radius {
                        let s = T::from_f64(radius / norm);
                        for e in 0..per {
                            data[e * n + fi] *= s;
                        }
                    }
                }
            }
            Layer::MLconv(b) => {
                for filter in &mut b.filters {
                    let mut sq = 0.0f64;
                    for mode in 0..3 {
                        sq += filter
                            .factor(mode)
                            .data()
                            .iter()
                            .map(|&v| v.to_f64().powi(2))
                            .sum::<f64>();
                    }
                    let norm = sq.sqrt();
                    if norm > radius {
                        let s = T::from_f64(radius / norm);
                        for mode in 0..3 {
                            for v in filter.factor_mut(mode).data_mut() {
                                *v *= s;
                            }
                        }
                    }
                }
            }
            Layer::LRConv(b) => {
                clamp_last_axis(&mut b.vertical, radius);
                clamp_last_axis(&mut b.horizontal, radius);
            }
            _ => {}
        }
    }

    /// Output channel count given the input channel count.
    pub fn out_channels(&self, in_channels: usize) -> usize {
        match self {
            Layer::Conv(b) => b.out_channels(),
            Layer::MLconv(b) => b.out_channels(),
            Layer::LRConv(b) => b.out_channels(),
            _ => in_channels,
        }
    }
}

fn clamp_last_axis<T: Scalar>(t: &mut Tensor<T>, radius: f64) {
    let n = *t.shape().last().unwrap();
    let per = t.len() / n;
    let data = t.data_mut();
    for fi in 0..n {
        let mut sq = 0.0f64;
        for e in 0..per {
            sq += data[e * n + fi].to_f64().powi(2);
        }
        let norm = sq.sqrt();
        if norm > radius {
            let s = T::from_f64(radius / norm);
            for e in 0..per {
                data[e * n + fi] *= s;
            }
        }
    }
}

mod network;
pub use network::{Gradients, Network, Tape};

#[cfg(test)]
mod grad_tests;
