//! Low-rank convolution baseline: a `d×1` vertical convolution into K
//! intermediate maps followed by a `1×d` horizontal convolution into N
//! outputs. Equivalent to convolving with the rank-K composed kernels
//! `W̃ⁿ_c = Σ_k Vᶜ_k (Hᵏ_n)ᵀ`.

use super::conv::{conv2d_backward_raw, conv2d_raw, dims4};
use crate::scalar::Scalar;
use crate::tensor::{ShapeError, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct LRConvBank<T> {
    /// `(d, 1, C, K)` vertical kernels.
    pub vertical: Tensor<T>,
    /// `(1, d, K, N)` horizontal kernels.
    pub horizontal: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Scalar> LRConvBank<T> {
    pub fn new(
        vertical: Tensor<T>,
        horizontal: Tensor<T>,
        bias: Tensor<T>,
    ) -> Result<Self, ShapeError> {
        if vertical.order() != 4 || horizontal.order() != 4 {
            return Err(ShapeError::DimMismatch(
                "low-rank kernels must be 4-way".into(),
            ));
        }
        let d = vertical.shape()[0];
        let k = vertical.shape()[3];
        if vertical.shape()[1] != 1 {
            return Err(ShapeError::DimMismatch(
                "vertical kernel must be d×1".into(),
            ));
        }
        if horizontal.shape()[0] != 1 || horizontal.shape()[1] != d {
            return Err(ShapeError::DimMismatch(
                "horizontal kernel must be 1×d with matching d".into(),
            ));
        }
        if horizontal.shape()[2] != k {
            return Err(ShapeError::DimMismatch(format!(
                "intermediate map counts differ: {} vs {k}",
                horizontal.shape()[2]
            )));
        }
        let n = horizontal.shape()[3];
        if bias.shape() != [n] {
            return Err(ShapeError::DimMismatch(
                "bias length must match output count".into(),
            ));
        }
        Ok(LRConvBank {
            vertical,
            horizontal,
            bias,
        })
    }

    pub fn kernel_size(&self) -> usize {
        self.vertical.shape()[0]
    }

    pub fn in_channels(&self) -> usize {
        self.vertical.shape()[2]
    }

    pub fn intermediate_maps(&self) -> usize {
        self.vertical.shape()[3]
    }

    pub fn out_channels(&self) -> usize {
        self.horizontal.shape()[3]
    }

    /// The dense `(d, d, C, N)` kernels this bank factorizes.
    pub fn compose_kernels(&self) -> Tensor<T> {
        let d = self.kernel_size();
        let c = self.in_channels();
        let k = self.intermediate_maps();
        let n = self.out_channels();
        let mut w = Tensor::zeros(&[d, d, c, n]);
        for i in 0..d {
            for j in 0..d {
                for cc in 0..c {
                    for nn in 0..n {
                        let mut acc = T::zero();
                        for kk in 0..k {
                            acc += self.vertical.at(&[i, 0, cc, kk]).unwrap()
                                * self.horizontal.at(&[0, j, kk, nn]).unwrap();
                        }
                        w.set(&[i, j, cc, nn], acc).unwrap();
                    }
                }
            }
        }
        w
    }

    /// Returns the output and the intermediate maps needed for backward.
    pub fn forward(&self, x: &Tensor<T>) -> (Tensor<T>, Tensor<T>) {
        let (_, _, _, c) = dims4(x);
        assert_eq!(c, self.in_channels(), "input channel mismatch");
        let mid = conv2d_raw(x, &self.vertical, None);
        let y = conv2d_raw(&mid, &self.horizontal, Some(self.bias.data()));
        (y, mid)
    }

    /// `(dx, dvertical, dhorizontal, dbias)`.
    pub fn backward(
        &self,
        x: &Tensor<T>,
        mid: &Tensor<T>,
        dy: &Tensor<T>,
    ) -> (Tensor<T>, Tensor<T>, Tensor<T>, Tensor<T>) {
        let (dmid, dh, dbias) = conv2d_backward_raw(mid, &self.horizontal, dy);
        let (dx, dv, _) = conv2d_backward_raw(x, &self.vertical, &dmid);
        (dx, dv, dh, dbias)
    }
}
