//! Classical momentum SGD and Adam, with per-tensor accumulators mirroring
//! the network's parameter visitation order.

use crate::layers::{Gradients, Network};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OptimizerKind {
    /// `v ← momentum·v + g; p ← p − lr·v`.
    SgdMomentum { momentum: f64 },
    /// Bias-corrected first/second moment update.
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

#[derive(Debug, Clone)]
pub struct OptimizerState<T: Scalar> {
    /// Velocity (SGD) or first moment (Adam), one per parameter tensor.
    first: Vec<Tensor<T>>,
    /// Second moment; used by Adam only.
    second: Vec<Tensor<T>>,
    steps: u64,
}

impl<T: Scalar> OptimizerState<T> {
    pub fn for_network(net: &Network<T>) -> Self {
        let mut shapes: Vec<Vec<usize>> = Vec::new();
        net.visit_params(&mut |t| shapes.push(t.shape().to_vec()));
        OptimizerState {
            first: shapes.iter().map(|s| Tensor::zeros(s)).collect(),
            second: shapes.iter().map(|s| Tensor::zeros(s)).collect(),
            steps: 0,
        }
    }

    /// Apply one update across every parameter tensor.
    pub fn step(
        &mut self,
        net: &mut Network<T>,
        grads: &Gradients<T>,
        kind: &OptimizerKind,
        lr: f64,
    ) {
        let flat = grads.flat();
        self.steps += 1;
        let t = self.steps;
        let mut i = 0usize;
        net.visit_params_mut(&mut |p| {
            let g = flat[i];
            assert_eq!(
                g.shape(),
                p.shape(),
                "gradient {i} does not match its parameter"
            );
            match *kind {
                OptimizerKind::SgdMomentum { momentum } => sgd_momentum_update(
                    p.data_mut(),
                    g.data(),
                    self.first[i].data_mut(),
                    lr,
                    momentum,
                ),
                OptimizerKind::Adam { beta1, beta2, eps } => adam_update(
                    p.data_mut(),
                    g.data(),
                    self.first[i].data_mut(),
                    self.second[i].data_mut(),
                    t,
                    lr,
                    beta1,
                    beta2,
                    eps,
                ),
            }
            i += 1;
        });
        assert_eq!(i, flat.len(), "parameter/gradient count mismatch");
    }
}

/// Classical (non-Nesterov) momentum.
pub fn sgd_momentum_update<T: Scalar>(
    params: &mut [T],
    grads: &[T],
    velocity: &mut [T],
    lr: f64,
    momentum: f64,
) {
    assert_eq!(params.len(), grads.len());
    assert_eq!(params.len(), velocity.len());
    let lr = T::from_f64(lr);
    let mu = T::from_f64(momentum);
    for ((p, &g), v) in params.iter_mut().zip(grads).zip(velocity.iter_mut()) {
        *v = mu * *v + g;
        *p = *p - lr * *v;
    }
}

/// Adam with bias correction; `t` is the 1-based step count.
#[allow(clippy::too_many_arguments)]
pub fn adam_update<T: Scalar>(
    params: &mut [T],
    grads: &[T],
    m: &mut [T],
    v: &mut [T],
    t: u64,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
) {
    assert_eq!(params.len(), grads.len());
    let b1 = T::from_f64(beta1);
    let b2 = T::from_f64(beta2);
    let one = T::one();
    let corr1 = T::from_f64(1.0 - beta1.powi(t as i32));
    let corr2 = T::from_f64(1.0 - beta2.powi(t as i32));
    let lr = T::from_f64(lr);
    let eps = T::from_f64(eps);
    for (((p, &g), mi), vi) in params
        .iter_mut()
        .zip(grads)
        .zip(m.iter_mut())
        .zip(v.iter_mut())
    {
        *mi = b1 * *mi + (one - b1) * g;
        *vi = b2 * *vi + (one - b2) * g * g;
        let mhat = *mi / corr1;
        let vhat = *vi / corr2;
        *p = *p - lr * mhat / (vhat.sqrt() + eps);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plain_sgd_when_momentum_is_zero() {
        let mut p = [1.0f64];
        let mut v = [0.0f64];
        sgd_momentum_update(&mut p, &[2.0], &mut v, 0.1, 0.0);
        assert!((p[0] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn momentum_accumulates_over_steps() {
        let mut p = [0.0f64];
        let mut v = [0.0f64];
        sgd_momentum_update(&mut p, &[1.0], &mut v, 0.1, 0.9);
        assert!((v[0] - 1.0).abs() < 1e-15);
        assert!((p[0] + 0.1).abs() < 1e-15);
        sgd_momentum_update(&mut p, &[1.0], &mut v, 0.1, 0.9);
        assert!((v[0] - 1.9).abs() < 1e-15);
        assert!((p[0] + 0.29).abs() < 1e-15);
    }

    #[test]
    fn zero_gradients_decay_velocity_only() {
        let mut p = [0.5f64];
        let mut v = [1.0f64];
        sgd_momentum_update(&mut p, &[0.0], &mut v, 0.0, 0.9);
        assert_eq!(p, [0.5]);
        assert!((v[0] - 0.9).abs() < 1e-15);
    }

    #[test]
    fn adam_first_step_is_signed_lr() {
        for &g in &[3.0f64, -0.25, 1e-4] {
            let mut p = [0.0f64];
            let mut m = [0.0f64];
            let mut v = [0.0f64];
            adam_update(&mut p, &[g], &mut m, &mut v, 1, 0.01, 0.9, 0.999, 1e-12);
            assert!(
                (p[0] + 0.01 * g.signum()).abs() < 1e-8,
                "g={g} gave {}",
                p[0]
            );
        }
    }

    #[test]
    fn adam_zero_gradient_keeps_parameters() {
        let mut p = [0.7f64];
        let mut m = [0.0f64];
        let mut v = [0.0f64];
        adam_update(&mut p, &[0.0], &mut m, &mut v, 1, 0.01, 0.9, 0.999, 1e-8);
        assert_eq!(p, [0.7]);
    }

    #[test]
    fn adam_two_steps_match_hand_recursion() {
        let (b1, b2, eps, lr, g) = (0.9f64, 0.999, 1e-8, 0.05, 2.0);
        let mut p = [1.0f64];
        let mut m = [0.0f64];
        let mut v = [0.0f64];
        adam_update(&mut p, &[g], &mut m, &mut v, 1, lr, b1, b2, eps);
        adam_update(&mut p, &[g], &mut m, &mut v, 2, lr, b1, b2, eps);

        // Hand recursion.
        let mut hm = 0.0;
        let mut hv = 0.0;
        let mut hp = 1.0;
        for t in 1..=2u32 {
            hm = b1 * hm + (1.0 - b1) * g;
            hv = b2 * hv + (1.0 - b2) * g * g;
            let mh = hm / (1.0 - b1.powi(t as i32));
            let vh = hv / (1.0 - b2.powi(t as i32));
            hp -= lr * mh / (vh.sqrt() + eps);
        }
        assert!((p[0] - hp).abs() < 1e-14, "{} vs {hp}", p[0]);
    }
}
