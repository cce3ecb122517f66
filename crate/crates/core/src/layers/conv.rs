//! Standard convolution: a bank of dense `d×d×C` kernels applied with zero
//! padding and stride 1, evaluated as one patch-matrix product per batch.
//!
//! Padding places `(k−1)/2` rows/columns before and `k/2` after, so output
//! spatial size always equals input size (symmetric for odd kernels).

use crate::matmul::{mm, mm_a_bt, mm_at_b};
use crate::scalar::Scalar;
use crate::tensor::{ShapeError, Tensor};

/// Bank of `N` dense convolution kernels `(d, d, C, N)` plus per-kernel bias.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvKernelBank<T> {
    pub weights: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Scalar> ConvKernelBank<T> {
    /// Square odd-sized kernels only; rectangular kernels stay internal to
    /// the low-rank layer.
    pub fn new(weights: Tensor<T>, bias: Tensor<T>) -> Result<Self, ShapeError> {
        if weights.order() != 4 {
            return Err(ShapeError::DimMismatch(
                "conv weights must be (d, d, C, N)".into(),
            ));
        }
        let d = weights.shape()[0];
        if weights.shape()[1] != d {
            return Err(ShapeError::DimMismatch(
                "conv kernels must be square".into(),
            ));
        }
        if d % 2 == 0 {
            return Err(ShapeError::DimMismatch(format!(
                "kernel size must be odd for symmetric padding, got {d}"
            )));
        }
        let n = weights.shape()[3];
        if bias.shape() != [n] {
            return Err(ShapeError::DimMismatch(format!(
                "bias length {:?} does not match kernel count {n}",
                bias.shape()
            )));
        }
        Ok(ConvKernelBank { weights, bias })
    }

    pub fn kernel_size(&self) -> usize {
        self.weights.shape()[0]
    }

    pub fn in_channels(&self) -> usize {
        self.weights.shape()[2]
    }

    pub fn out_channels(&self) -> usize {
        self.weights.shape()[3]
    }

    pub fn forward(&self, x: &Tensor<T>) -> Tensor<T> {
        conv2d_raw(x, &self.weights, Some(self.bias.data()))
    }

    /// Returns `(dx, dweights, dbias)` for upstream gradient `dy`.
    pub fn backward(&self, x: &Tensor<T>, dy: &Tensor<T>) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
        conv2d_backward_raw(x, &self.weights, dy)
    }
}

/// Gather zero-padded patches: `(B, H, W, C)` → `(B·H·W) × (kh·kw·C)`.
pub(crate) fn im2col<T: Scalar>(x: &Tensor<T>, kh: usize, kw: usize) -> Vec<T> {
    let (b, h, w, c) = dims4(x);
    let (ph, pw) = ((kh - 1) / 2, (kw - 1) / 2);
    let cols = kh * kw * c;
    let mut out = vec![T::zero(); b * h * w * cols];
    let xd = x.data();
    for bb in 0..b {
        for y in 0..h {
            for xx in 0..w {
                let row = ((bb * h + y) * w + xx) * cols;
                for di in 0..kh {
                    let sy = y as isize + di as isize - ph as isize;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    for dj in 0..kw {
                        let sx = xx as isize + dj as isize - pw as isize;
                        if sx < 0 || sx >= w as isize {
                            continue;
                        }
                        let src = ((bb * h + sy as usize) * w + sx as usize) * c;
                        let dst = row + (di * kw + dj) * c;
                        out[dst..dst + c].copy_from_slice(&xd[src..src + c]);
                    }
                }
            }
        }
    }
    out
}

/// Scatter-add of patch-matrix gradients back onto the input grid.
pub(crate) fn col2im<T: Scalar>(
    dp: &[T],
    b: usize,
    h: usize,
    w: usize,
    c: usize,
    kh: usize,
    kw: usize,
) -> Tensor<T> {
    let (ph, pw) = ((kh - 1) / 2, (kw - 1) / 2);
    let cols = kh * kw * c;
    let mut dx = Tensor::zeros(&[b, h, w, c]);
    let out = dx.data_mut();
    for bb in 0..b {
        for y in 0..h {
            for xx in 0..w {
                let row = ((bb * h + y) * w + xx) * cols;
                for di in 0..kh {
                    let sy = y as isize + di as isize - ph as isize;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    for dj in 0..kw {
                        let sx = xx as isize + dj as isize - pw as isize;
                        if sx < 0 || sx >= w as isize {
                            continue;
                        }
                        let dst = ((bb * h + sy as usize) * w + sx as usize) * c;
                        let src = row + (di * kw + dj) * c;
                        for k in 0..c {
                            out[dst + k] += dp[src + k];
                        }
                    }
                }
            }
        }
    }
    dx
}

/// Convolution with an arbitrary `(kh, kw, C, N)` kernel tensor; `1×1`
/// kernels skip patch gathering entirely.
pub(crate) fn conv2d_raw<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, bias: Option<&[T]>) -> Tensor<T> {
    let (b, h, wd, c) = dims4(x);
    let (kh, kw, wc, n) = dims4(w);
    assert_eq!(c, wc, "input channels {c} do not match kernel channels {wc}");
    let rows = b * h * wd;
    let mut ymat = if kh == 1 && kw == 1 {
        mm(x.data(), w.data(), rows, c, n)
    } else {
        let patches = im2col(x, kh, kw);
        mm(&patches, w.data(), rows, kh * kw * c, n)
    };
    if let Some(bias) = bias {
        for row in ymat.chunks_exact_mut(n) {
            for (y, &bv) in row.iter_mut().zip(bias) {
                *y += bv;
            }
        }
    }
    Tensor::from_vec(&[b, h, wd, n], ymat).expect("conv output shape")
}

/// Gradients of [`conv2d_raw`]: `(dx, dw, dbias)`.
pub(crate) fn conv2d_backward_raw<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    dy: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let (b, h, wd, c) = dims4(x);
    let (kh, kw, _, n) = dims4(w);
    let rows = b * h * wd;
    assert_eq!(dy.shape(), &[b, h, wd, n], "upstream gradient shape");

    let mut dbias = Tensor::zeros(&[n]);
    {
        let db = dbias.data_mut();
        for row in dy.data().chunks_exact(n) {
            for (d, &g) in db.iter_mut().zip(row) {
                *d += g;
            }
        }
    }

    let k = kh * kw * c;
    let (dw, dx) = if kh == 1 && kw == 1 {
        let dw = mm_at_b(x.data(), dy.data(), rows, c, n);
        let dxm = mm_a_bt(dy.data(), w.data(), rows, n, c);
        (dw, Tensor::from_vec(&[b, h, wd, c], dxm).expect("dx shape"))
    } else {
        let patches = im2col(x, kh, kw);
        let dw = mm_at_b(&patches, dy.data(), rows, k, n);
        let dp = mm_a_bt(dy.data(), w.data(), rows, n, k);
        (dw, col2im(&dp, b, h, wd, c, kh, kw))
    };
    let dw = Tensor::from_vec(w.shape(), dw).expect("dw shape");
    (dx, dw, dbias)
}

pub(crate) fn dims4<T: Scalar>(t: &Tensor<T>) -> (usize, usize, usize, usize) {
    assert_eq!(t.order(), 4, "expected a 4-way tensor, got {:?}", t.shape());
    (t.shape()[0], t.shape()[1], t.shape()[2], t.shape()[3])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracles::{max_rel_err, naive_conv2d};
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rt(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
        Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn pointwise_single_value() {
        let x = Tensor::from_vec(&[1, 1, 1, 1], vec![2.0]).unwrap();
        let w = Tensor::from_vec(&[1, 1, 1, 1], vec![3.0]).unwrap();
        let bank = ConvKernelBank::new(w, Tensor::from_vec(&[1], vec![0.5]).unwrap()).unwrap();
        let y = bank.forward(&x);
        assert_eq!(y.data(), &[6.5]);
    }

    #[test]
    fn centered_one_hot_kernel_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let x = rt(&[1, 3, 3, 1], &mut rng);
        let w = Tensor::from_fn(&[3, 3, 1, 1], |idx| {
            if idx[0] == 1 && idx[1] == 1 {
                1.0
            } else {
                0.0
            }
        });
        let bank = ConvKernelBank::new(w, Tensor::zeros(&[1])).unwrap();
        let y = bank.forward(&x);
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn matches_six_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(32);
        let x = rt(&[2, 5, 5, 2], &mut rng);
        let w = rt(&[3, 3, 2, 2], &mut rng);
        let bias = rt(&[2], &mut rng);
        let y = conv2d_raw(&x, &w, Some(bias.data()));
        let want = naive_conv2d(&x, &w, bias.data());
        assert!(max_rel_err(&y, &want) <= 1e-12);
    }

    #[test]
    fn rectangular_kernels_match_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let x = rt(&[1, 4, 5, 3], &mut rng);
        for (kh, kw) in [(3, 1), (1, 3), (1, 1)] {
            let w = rt(&[kh, kw, 3, 2], &mut rng);
            let bias = rt(&[2], &mut rng);
            let y = conv2d_raw(&x, &w, Some(bias.data()));
            let want = naive_conv2d(&x, &w, bias.data());
            assert!(max_rel_err(&y, &want) <= 1e-12, "kernel {kh}x{kw}");
        }
    }

    #[test]
    fn bank_rejects_even_or_mismatched_kernels() {
        let w = Tensor::<f64>::zeros(&[2, 2, 1, 1]);
        assert!(ConvKernelBank::new(w, Tensor::zeros(&[1])).is_err());
        let w = Tensor::<f64>::zeros(&[3, 3, 1, 2]);
        assert!(ConvKernelBank::new(w, Tensor::zeros(&[1])).is_err());
    }

    #[test]
    fn forward_is_linear_in_input_without_bias() {
        let mut rng = ChaCha8Rng::seed_from_u64(34);
        let w = rt(&[3, 3, 2, 2], &mut rng);
        let zero = vec![0.0; 2];
        let xa = rt(&[1, 4, 4, 2], &mut rng);
        let xb = rt(&[1, 4, 4, 2], &mut rng);
        let (a, b) = (0.7, -1.3);
        let mixed = Tensor::from_vec(
            xa.shape(),
            xa.data()
                .iter()
                .zip(xb.data())
                .map(|(&p, &q)| a * p + b * q)
                .collect(),
        )
        .unwrap();
        let ya = conv2d_raw(&xa, &w, Some(&zero));
        let yb = conv2d_raw(&xb, &w, Some(&zero));
        let ym = conv2d_raw(&mixed, &w, Some(&zero));
        for ((&m, &p), &q) in ym.data().iter().zip(ya.data()).zip(yb.data()) {
            assert!((m - (a * p + b * q)).abs() < 1e-12);
        }
    }
}
