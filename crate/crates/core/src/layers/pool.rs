//! Spatial pooling: non-overlapping 2×2 max pooling and global averaging.

use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// 2×2/stride-2 max pooling. Spatial dims must be even (validated when the
/// model is built). Returns the pooled map and the flat input offset of each
/// selected maximum; ties go to the lowest linear index.
pub fn maxpool2x2<T: Scalar>(x: &Tensor<T>) -> (Tensor<T>, Vec<u32>) {
    let (b, h, w, n) = super::conv::dims4(x);
    assert!(h % 2 == 0 && w % 2 == 0, "odd spatial size {h}x{w}");
    let (oh, ow) = (h / 2, w / 2);
    let mut y = Tensor::zeros(&[b, oh, ow, n]);
    let mut arg = vec![0u32; b * oh * ow * n];
    let xd = x.data();
    let yd = y.data_mut();
    for bb in 0..b {
        for oy in 0..oh {
            for ox in 0..ow {
                let out = ((bb * oh + oy) * ow + ox) * n;
                for c in 0..n {
                    let mut best_off = ((bb * h + 2 * oy) * w + 2 * ox) * n + c;
                    let mut best = xd[best_off];
                    for (dy, dx) in [(0usize, 1usize), (1, 0), (1, 1)] {
                        let off = ((bb * h + 2 * oy + dy) * w + 2 * ox + dx) * n + c;
                        if xd[off] > best {
                            best = xd[off];
                            best_off = off;
                        }
                    }
                    yd[out + c] = best;
                    arg[out + c] = best_off as u32;
                }
            }
        }
    }
    (y, arg)
}

/// Route each upstream gradient entry to the argmax position of its window.
pub fn maxpool2x2_backward<T: Scalar>(
    input_shape: &[usize],
    argmax: &[u32],
    dy: &Tensor<T>,
) -> Tensor<T> {
    let mut dx = Tensor::zeros(input_shape);
    let dxd = dx.data_mut();
    for (&off, &g) in argmax.iter().zip(dy.data()) {
        dxd[off as usize] += g;
    }
    dx
}

/// Mean over the spatial axes: `(B, H, W, N)` → `(B, N)`.
pub fn global_avg_pool<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let (b, h, w, n) = super::conv::dims4(x);
    let mut y = Tensor::zeros(&[b, n]);
    let inv = T::from_f64(1.0 / (h * w) as f64);
    let yd = y.data_mut();
    for bb in 0..b {
        let base = bb * h * w * n;
        for row in x.data()[base..base + h * w * n].chunks_exact(n) {
            for (acc, &v) in yd[bb * n..(bb + 1) * n].iter_mut().zip(row) {
                *acc += v;
            }
        }
        for acc in yd[bb * n..(bb + 1) * n].iter_mut() {
            *acc *= inv;
        }
    }
    y
}

pub fn global_avg_pool_backward<T: Scalar>(input_shape: &[usize], dy: &Tensor<T>) -> Tensor<T> {
    let (b, h, w, n) = (
        input_shape[0],
        input_shape[1],
        input_shape[2],
        input_shape[3],
    );
    let inv = T::from_f64(1.0 / (h * w) as f64);
    let mut dx = Tensor::zeros(input_shape);
    let dxd = dx.data_mut();
    for bb in 0..b {
        let grad = &dy.data()[bb * n..(bb + 1) * n];
        let base = bb * h * w * n;
        for row in dxd[base..base + h * w * n].chunks_exact_mut(n) {
            for (d, &g) in row.iter_mut().zip(grad) {
                *d = g * inv;
            }
        }
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracles::naive_maxpool2x2;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_window_takes_the_max() {
        let x = Tensor::from_vec(&[1, 2, 2, 1], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let (y, _) = maxpool2x2(&x);
        assert_eq!(y.data(), &[4.0]);
    }

    #[test]
    fn constant_input_stays_constant() {
        let x = Tensor::from_vec(&[1, 4, 4, 2], vec![0.7; 32]).unwrap();
        let (y, _) = maxpool2x2(&x);
        assert!(y.data().iter().all(|&v| v == 0.7));
    }

    #[test]
    fn matches_window_scan_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(71);
        let x = Tensor::from_fn(&[2, 4, 4, 3], |_| rng.gen_range(-1.0..1.0));
        let (y, _) = maxpool2x2(&x);
        assert_eq!(y, naive_maxpool2x2(&x));
    }

    #[test]
    fn backward_routes_each_entry_once() {
        let mut rng = ChaCha8Rng::seed_from_u64(72);
        let x = Tensor::from_fn(&[1, 4, 4, 1], |_| rng.gen_range(-1.0..1.0));
        let (y, arg) = maxpool2x2(&x);
        let dy = Tensor::from_vec(y.shape(), vec![1.0; y.len()]).unwrap();
        let dx = maxpool2x2_backward(x.shape(), &arg, &dy);
        let nonzero = dx.data().iter().filter(|&&v| v != 0.0).count();
        assert_eq!(nonzero, y.len());
        let total: f64 = dx.data().iter().sum();
        assert_eq!(total, y.len() as f64);
    }

    #[test]
    fn ties_break_to_lowest_index() {
        let x = Tensor::from_vec(&[1, 2, 2, 1], vec![5.0, 5.0, 5.0, 5.0]).unwrap();
        let (_, arg) = maxpool2x2(&x);
        assert_eq!(arg, vec![0]);
    }

    #[test]
    fn gap_identity_and_mean() {
        let x = Tensor::from_vec(&[1, 1, 1, 3], vec![1.0, 2.0, 3.0]).unwrap();
        assert_eq!(global_avg_pool(&x).data(), &[1.0, 2.0, 3.0]);

        let c = Tensor::from_vec(&[1, 2, 3, 1], vec![0.4; 6]).unwrap();
        let y = global_avg_pool(&c);
        assert!((y.data()[0] - 0.4).abs() < 1e-12);

        let mut rng = ChaCha8Rng::seed_from_u64(73);
        let r = Tensor::from_fn(&[2, 3, 3, 2], |_| rng.gen_range(-1.0..1.0));
        let y = global_avg_pool(&r);
        for bb in 0..2 {
            for cc in 0..2 {
                let mut s = 0.0;
                for yy in 0..3 {
                    for xx in 0..3 {
                        s += r.at(&[bb, yy, xx, cc]).unwrap();
                    }
                }
                assert!((y.at(&[bb, cc]).unwrap() - s / 9.0).abs() < 1e-12);
            }
        }
    }
}
