//! A sequential network over the layer kinds in this module. The forward
//! pass records a tape (every inter-layer activation plus per-layer caches)
//! that the backward pass consumes; batch-norm running statistics are folded
//! in by an explicit call between forward and backward.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{Layer, LayerCache, Phase};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct Network<T: Scalar> {
    pub layers: Vec<Layer<T>>,
    /// Expected input as (height, width, channels).
    pub input_shape: [usize; 3],
    pub class_count: usize,
}

/// Everything a backward pass needs: `activations[i]` is the input of layer
/// `i`, the final entry is the logits.
pub struct Tape<T: Scalar> {
    pub activations: Vec<Tensor<T>>,
    pub caches: Vec<LayerCache<T>>,
}

impl<T: Scalar> Tape<T> {
    pub fn logits(&self) -> &Tensor<T> {
        self.activations.last().expect("tape holds the input at least")
    }
}

/// Parameter gradients, mirroring each layer's parameter visitation order.
#[derive(Debug, Clone)]
pub struct Gradients<T: Scalar> {
    pub layers: Vec<Vec<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// Flat view in global parameter order.
    pub fn flat(&self) -> Vec<&Tensor<T>> {
        self.layers.iter().flatten().collect()
    }
}

impl<T: Scalar> Network<T> {
    pub fn new(layers: Vec<Layer<T>>, input_shape: [usize; 3], class_count: usize) -> Self {
        Network {
            layers,
            input_shape,
            class_count,
        }
    }

    pub fn forward(
        &self,
        input: &Tensor<T>,
        phase: Phase,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Tape<T> {
        self.check_input(input);
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        let mut caches = Vec::with_capacity(self.layers.len());
        activations.push(input.clone());
        for layer in &self.layers {
            let (y, cache) = layer.forward(
                activations.last().unwrap(),
                phase,
                rng.as_deref_mut(),
            );
            activations.push(y);
            caches.push(cache);
        }
        Tape {
            activations,
            caches,
        }
    }

    /// Inference logits without tape bookkeeping.
    pub fn forward_eval(&self, input: &Tensor<T>) -> Tensor<T> {
        self.check_input(input);
        let mut x = input.clone();
        for layer in &self.layers {
            let (y, _) = layer.forward(&x, Phase::Eval, None);
            x = y;
        }
        x
    }

    /// Backpropagate `dlogits`; returns parameter gradients and the input
    /// gradient.
    pub fn backward(&self, tape: &Tape<T>, dlogits: &Tensor<T>) -> (Gradients<T>, Tensor<T>) {
        let mut per_layer: Vec<Vec<Tensor<T>>> = Vec::with_capacity(self.layers.len());
        per_layer.resize_with(self.layers.len(), Vec::new);
        let mut dx = dlogits.clone();
        for i in (0..self.layers.len()).rev() {
            let (dxi, grads) =
                self.layers[i].backward(&tape.activations[i], &tape.caches[i], &dx);
            per_layer[i] = grads;
            dx = dxi;
        }
        (Gradients { layers: per_layer }, dx)
    }

    /// Fold cached batch statistics into every batch-norm layer.
    pub fn update_running_stats(&mut self, tape: &Tape<T>) {
        for (layer, cache) in self.layers.iter_mut().zip(&tape.caches) {
            if let (Layer::BatchNorm(bn), LayerCache::BatchNorm(c)) = (layer, cache) {
                bn.update_running(c);
            }
        }
    }

    pub fn visit_params<'a>(&'a self, f: &mut impl FnMut(&'a Tensor<T>)) {
        for layer in &self.layers {
            layer.visit_params(f);
        }
    }

    pub fn visit_params_mut(&mut self, f: &mut impl FnMut(&mut Tensor<T>)) {
        for layer in &mut self.layers {
            layer.visit_params_mut(f);
        }
    }

    pub fn param_count(&self) -> usize {
        let mut count = 0;
        self.visit_params(&mut |t| count += t.len());
        count
    }

    pub fn apply_max_norm(&mut self, radius: f64) {
        for layer in &mut self.layers {
            layer.apply_max_norm(radius);
        }
    }

    /// Re-draw every learnable weight with fan-in scaled Gaussian noise.
    ///
    /// Factor matrices are scaled so the reconstructed kernels match the
    /// variance a dense kernel would get: each mode uses
    /// `(2 / (R·d²·C))^{1/6}`, making the rank-R sum of triple products come
    /// out at `2 / (d²·C)`.
    pub fn init_params(&mut self, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut gauss = |std: f64, t: &mut Tensor<T>| {
            for v in t.data_mut() {
                let g: f64 = rng.sample(StandardNormal);
                *v = T::from_f64(g * std);
            }
        };
        for layer in &mut self.layers {
            match layer {
                Layer::Conv(b) => {
                    let (d0, d1, c) = (
                        b.weights.shape()[0],
                        b.weights.shape()[1],
                        b.weights.shape()[2],
                    );
                    let std = (2.0 / (d0 * d1 * c) as f64).sqrt();
                    gauss(std, &mut b.weights);
                    b.bias = Tensor::zeros(&[b.bias.len()]);
                }
                Layer::MLconv(b) => {
                    let [d, _, c] = b.filters[0].dims();
                    let r = b.filters[0].rank();
                    let std = (2.0 / (r * d * d * c) as f64).powf(1.0 / 6.0);
                    for filter in &mut b.filters {
                        for mode in 0..3 {
                            gauss(std, filter.factor_mut(mode));
                        }
                    }
                    b.bias = Tensor::zeros(&[b.bias.len()]);
                }
                Layer::LRConv(b) => {
                    let d = b.vertical.shape()[0];
                    let c = b.vertical.shape()[2];
                    let k = b.vertical.shape()[3];
                    let vstd = (2.0 / (d * c) as f64).sqrt();
                    let hstd = (2.0 / (d * k) as f64).sqrt();
                    gauss(vstd, &mut b.vertical);
                    gauss(hstd, &mut b.horizontal);
                    b.bias = Tensor::zeros(&[b.bias.len()]);
                }
                _ => {}
            }
        }
    }

    fn check_input(&self, input: &Tensor<T>) {
        assert_eq!(input.order(), 4, "input must be (B, H, W, C)");
        assert_eq!(
            &input.shape()[1..],
            &self.input_shape[..],
            "input does not match the model's declared shape"
        );
    }
}
