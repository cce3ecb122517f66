//! Batch normalization over the channel axis of `(B, H, W, N)` maps.
//! Training mode normalizes with batch statistics (biased variance) and the
//! running averages are refreshed separately between forward and backward so
//! the forward pass itself stays pure.

use crate::scalar::Scalar;
use crate::tensor::{ShapeError, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormState<T> {
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
    pub running_mean: Tensor<T>,
    pub running_var: Tensor<T>,
    pub epsilon: f64,
    /// Weight of the current batch statistics in the running update.
    pub momentum: f64,
}

/// Batch statistics kept for the backward pass and the running update.
#[derive(Debug, Clone)]
pub struct BnCache<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
    pub inv_std: Vec<T>,
    pub used_batch_stats: bool,
}

impl<T: Scalar> BatchNormState<T> {
    pub fn new(channels: usize, epsilon: f64, momentum: f64) -> Result<Self, ShapeError> {
        if !(momentum > 0.0 && momentum < 1.0) {
            return Err(ShapeError::DimMismatch(format!(
                "momentum must lie in (0,1), got {momentum}"
            )));
        }
        Ok(BatchNormState {
            gamma: Tensor::from_vec(&[channels], vec![T::one(); channels])?,
            beta: Tensor::zeros(&[channels]),
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::from_vec(&[channels], vec![T::one(); channels])?,
            epsilon,
            momentum,
        })
    }

    pub fn channels(&self) -> usize {
        self.gamma.shape()[0]
    }

    pub fn forward(&self, x: &Tensor<T>, training: bool) -> (Tensor<T>, BnCache<T>) {
        let n = self.channels();
        assert_eq!(
            x.shape().last(),
            Some(&n),
            "channel count does not match gamma length"
        );
        let rows = x.len() / n;
        let (mean, var) = if training {
            let mut mean = vec![T::zero(); n];
            let mut sq = vec![T::zero(); n];
            for row in x.data().chunks_exact(n) {
                for ((m, s), &v) in mean.iter_mut().zip(sq.iter_mut()).zip(row) {
                    *m += v;
                    *s += v * v;
                }
            }
            let inv_rows = T::from_f64(1.0 / rows as f64);
            let mut var = vec![T::zero(); n];
            for c in 0..n {
                mean[c] *= inv_rows;
                var[c] = sq[c] * inv_rows - mean[c] * mean[c];
                if var[c] < T::zero() {
                    var[c] = T::zero();
                }
            }
            (mean, var)
        } else {
            (
                self.running_mean.data().to_vec(),
                self.running_var.data().to_vec(),
            )
        };
        let eps = T::from_f64(self.epsilon);
        let inv_std: Vec<T> = var.iter().map(|&v| (v + eps).sqrt().recip()).collect();

        let mut y = Tensor::zeros(x.shape());
        let g = self.gamma.data();
        let b = self.beta.data();
        for (yrow, xrow) in y.data_mut().chunks_exact_mut(n).zip(x.data().chunks_exact(n)) {
            for c in 0..n {
                yrow[c] = (xrow[c] - mean[c]) * inv_std[c] * g[c] + b[c];
            }
        }
        (
            y,
            BnCache {
                mean,
                var,
                inv_std,
                used_batch_stats: training,
            },
        )
    }

    /// `(dx, dgamma, dbeta)`; the cache decides which statistics were used.
    pub fn backward(
        &self,
        x: &Tensor<T>,
        cache: &BnCache<T>,
        dy: &Tensor<T>,
    ) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
        let n = self.channels();
        let rows = x.len() / n;
        let g = self.gamma.data();

        let mut dgamma = vec![T::zero(); n];
        let mut dbeta = vec![T::zero(); n];
        let mut sum_dxhat = vec![T::zero(); n];
        let mut sum_dxhat_xhat = vec![T::zero(); n];
        for (xrow, dyrow) in x.data().chunks_exact(n).zip(dy.data().chunks_exact(n)) {
            for c in 0..n {
                let xhat = (xrow[c] - cache.mean[c]) * cache.inv_std[c];
                dgamma[c] += dyrow[c] * xhat;
                dbeta[c] += dyrow[c];
                let dxhat = dyrow[c] * g[c];
                sum_dxhat[c] += dxhat;
                sum_dxhat_xhat[c] += dxhat * xhat;
            }
        }

        let mut dx = Tensor::zeros(x.shape());
        if cache.used_batch_stats {
            let m = T::from_f64(rows as f64);
            for ((dxrow, xrow), dyrow) in dx
                .data_mut()
                .chunks_exact_mut(n)
                .zip(x.data().chunks_exact(n))
                .zip(dy.data().chunks_exact(n))
            {
                for c in 0..n {
                    let xhat = (xrow[c] - cache.mean[c]) * cache.inv_std[c];
                    let dxhat = dyrow[c] * g[c];
                    dxrow[c] = (dxhat * m - sum_dxhat[c] - xhat * sum_dxhat_xhat[c])
                        * cache.inv_std[c]
                        / m;
                }
            }
        } else {
            // Frozen statistics: the map is affine per channel.
            for (dxrow, dyrow) in dx
                .data_mut()
                .chunks_exact_mut(n)
                .zip(dy.data().chunks_exact(n))
            {
                for c in 0..n {
                    dxrow[c] = dyrow[c] * g[c] * cache.inv_std[c];
                }
            }
        }
        (
            dx,
            Tensor::from_vec(&[n], dgamma).expect("dgamma"),
            Tensor::from_vec(&[n], dbeta).expect("dbeta"),
        )
    }

    /// Fold the cached batch statistics into the running averages.
    pub fn update_running(&mut self, cache: &BnCache<T>) {
        if !cache.used_batch_stats {
            return;
        }
        let m = T::from_f64(self.momentum);
        let keep = T::from_f64(1.0 - self.momentum);
        for (rm, &bm) in self.running_mean.data_mut().iter_mut().zip(&cache.mean) {
            *rm = keep * *rm + m * bm;
        }
        for (rv, &bv) in self.running_var.data_mut().iter_mut().zip(&cache.var) {
            *rv = keep * *rv + m * bv;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn constant_channel_normalizes_to_zero() {
        let bn = BatchNormState::<f64>::new(1, 1e-5, 0.1).unwrap();
        let x = Tensor::from_vec(&[2, 2, 2, 1], vec![3.25; 8]).unwrap();
        let (y, _) = bn.forward(&x, true);
        for &v in y.data() {
            assert!(v.abs() < 1e-9);
        }
    }

    #[test]
    fn training_output_has_zero_mean_unit_variance() {
        let mut rng = ChaCha8Rng::seed_from_u64(61);
        let x = Tensor::from_fn(&[4, 3, 3, 2], |_| rng.gen_range(-2.0..2.0));
        let bn = BatchNormState::<f64>::new(2, 1e-8, 0.1).unwrap();
        let (y, _) = bn.forward(&x, true);
        for c in 0..2 {
            let vals: Vec<f64> = y
                .data()
                .iter()
                .skip(c)
                .step_by(2)
                .copied()
                .collect();
            let m: f64 = vals.iter().sum::<f64>() / vals.len() as f64;
            let v: f64 = vals.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / vals.len() as f64;
            assert!(m.abs() < 1e-10, "mean {m}");
            assert!((v - 1.0).abs() < 1e-6, "var {v}");
        }
    }

    #[test]
    fn inference_applies_the_affine_formula() {
        let mut bn = BatchNormState::<f64>::new(1, 1e-5, 0.1).unwrap();
        bn.gamma = Tensor::from_vec(&[1], vec![2.0]).unwrap();
        bn.beta = Tensor::from_vec(&[1], vec![3.0]).unwrap();
        let x = Tensor::from_vec(&[1, 1, 2, 1], vec![0.5, -1.0]).unwrap();
        let (y, _) = bn.forward(&x, false);
        for (i, &xv) in x.data().iter().enumerate() {
            let want = 2.0 * xv / (1.0f64 + 1e-5).sqrt() + 3.0;
            assert!((y.data()[i] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn running_stats_follow_momentum() {
        let mut bn = BatchNormState::<f64>::new(1, 1e-5, 0.5).unwrap();
        let x = Tensor::from_vec(&[1, 1, 2, 1], vec![1.0, 3.0]).unwrap();
        let (_, cache) = bn.forward(&x, true);
        bn.update_running(&cache);
        // batch mean 2, biased var 1; running starts at (0, 1).
        assert!((bn.running_mean.data()[0] - 1.0).abs() < 1e-12);
        assert!((bn.running_var.data()[0] - 1.0).abs() < 1e-12);
    }
}
