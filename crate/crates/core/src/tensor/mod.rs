//! Dense multi-way arrays with mode-k operations.
//!
//! # Linearization
//!
//! One ordering rules the whole crate: a tensor of shape `(I_1, …, I_K)` is
//! stored row-major with the **last index varying fastest**, i.e. element
//! `(i_1, …, i_K)` lives at flat offset `i_1·I_2⋯I_K + … + i_{K-1}·I_K + i_K`.
//! Every derived layout follows from it:
//!
//! * the mode-k unfolding places fibers as columns ordered by the remaining
//!   indices `(i_1, …, i_{k-1}, i_{k+1}, …, i_K)` in the same
//!   last-index-fastest order;
//! * the Khatri-Rao column `(a_r ⊗ b_r)` is flattened with the second
//!   factor's index fastest, so chained products reproduce the unfolding
//!   column order exactly.
//!
//! File formats and oracle tests all assume this ordering.

mod cp;
mod linalg;

pub use cp::{cp_als, CpAlsOptions, CpAlsReport};
pub(crate) use linalg::{leading_left_singular_vectors, solve_spd_multi};

use thiserror::Error;

use crate::scalar::Scalar;

/// Errors raised by tensor construction and mode operations.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ShapeError {
    #[error("shape {shape:?} implies {expected} elements but {actual} were given")]
    DataLength {
        shape: Vec<usize>,
        expected: usize,
        actual: usize,
    },
    #[error("index {index:?} out of range for shape {shape:?}")]
    OutOfRange { index: Vec<usize>, shape: Vec<usize> },
    #[error("mode {mode} invalid for an order-{order} tensor")]
    InvalidMode { mode: usize, order: usize },
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),
    #[error("shape dimensions must be positive, got {0:?}")]
    ZeroDim(Vec<usize>),
}

/// Dense tensor with explicit shape; see the module docs for the element order.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(shape: &[usize]) -> Self {
        let len = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![T::zero(); len],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self, ShapeError> {
        if shape.iter().any(|&d| d == 0) {
            return Err(ShapeError::ZeroDim(shape.to_vec()));
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(ShapeError::DataLength {
                shape: shape.to_vec(),
                expected,
                actual: data.len(),
            });
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(&[usize]) -> T) -> Self {
        let mut t = Tensor::zeros(shape);
        let mut idx = vec![0usize; shape.len()];
        for pos in 0..t.data.len() {
            t.data[pos] = f(&idx);
            for ax in (0..shape.len()).rev() {
                idx[ax] += 1;
                if idx[ax] < shape[ax] {
                    break;
                }
                idx[ax] = 0;
            }
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn order(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    /// Flat offset of a multi-index; checked.
    pub fn offset(&self, index: &[usize]) -> Result<usize, ShapeError> {
        if index.len() != self.shape.len()
            || index.iter().zip(&self.shape).any(|(&i, &d)| i >= d)
        {
            return Err(ShapeError::OutOfRange {
                index: index.to_vec(),
                shape: self.shape.clone(),
            });
        }
        let mut off = 0;
        for (&i, &d) in index.iter().zip(&self.shape) {
            off = off * d + i;
        }
        Ok(off)
    }

    /// Checked element access; out-of-range indices are an error, never a wrap.
    pub fn at(&self, index: &[usize]) -> Result<T, ShapeError> {
        Ok(self.data[self.offset(index)?])
    }

    pub fn set(&mut self, index: &[usize], value: T) -> Result<(), ShapeError> {
        let off = self.offset(index)?;
        self.data[off] = value;
        Ok(())
    }

    /// Reinterpret with a new shape of the same element count.
    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor<T>, ShapeError> {
        let expected: usize = shape.iter().product();
        if expected != self.data.len() {
            return Err(ShapeError::DataLength {
                shape: shape.to_vec(),
                expected,
                actual: self.data.len(),
            });
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data: self.data.clone(),
        })
    }

    /// Drop every mode of size 1. A scalar-shaped tensor squeezes to shape `[1]`.
    pub fn squeeze(&self) -> Tensor<T> {
        let shape: Vec<usize> = self.shape.iter().copied().filter(|&d| d > 1).collect();
        let shape = if shape.is_empty() { vec![1] } else { shape };
        Tensor {
            shape,
            data: self.data.clone(),
        }
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data
            .iter()
            .map(|&v| {
                let x = v.to_f64();
                x * x
            })
            .sum::<f64>()
            .sqrt()
    }

    pub fn map<U: Scalar>(&self, f: impl Fn(T) -> U) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn to_f64(&self) -> Tensor<f64> {
        self.map(|v| v.to_f64())
    }

    /// Mode-k unfolding: the `I_k × ∏_{i≠k} I_i` matrix whose columns are the
    /// mode-k fibers, ordered as described in the module docs.
    pub fn unfold(&self, mode: usize) -> Result<Tensor<T>, ShapeError> {
        let order = self.order();
        if mode >= order {
            return Err(ShapeError::InvalidMode { mode, order });
        }
        let ik = self.shape[mode];
        let rest: usize = self.data.len() / ik;
        let inner: usize = self.shape[mode + 1..].iter().product();
        let outer: usize = self.shape[..mode].iter().product();
        let mut out = vec![T::zero(); self.data.len()];
        // Column index of fiber (o, i) with o over the outer block and i over
        // the inner block: o·inner + i.
        for o in 0..outer {
            for f in 0..ik {
                let src = (o * ik + f) * inner;
                let dst_row = f * rest;
                let dst_col = o * inner;
                out[dst_row + dst_col..dst_row + dst_col + inner]
                    .copy_from_slice(&self.data[src..src + inner]);
            }
        }
        Tensor::from_vec(&[ik, rest], out)
    }

    /// Inverse of [`Tensor::unfold`]: rebuild a tensor of `shape` from its
    /// mode-k unfolding.
    pub fn refold(matrix: &Tensor<T>, mode: usize, shape: &[usize]) -> Result<Tensor<T>, ShapeError> {
        let order = shape.len();
        if mode >= order {
            return Err(ShapeError::InvalidMode { mode, order });
        }
        if matrix.order() != 2 {
            return Err(ShapeError::DimMismatch(format!(
                "refold expects a matrix, got order {}",
                matrix.order()
            )));
        }
        let ik = shape[mode];
        let rest: usize = shape.iter().product::<usize>() / ik;
        if matrix.shape() != [ik, rest] {
            return Err(ShapeError::DimMismatch(format!(
                "refold shape {:?} incompatible with target {:?} at mode {}",
                matrix.shape(),
                shape,
                mode
            )));
        }
        let inner: usize = shape[mode + 1..].iter().product();
        let outer: usize = shape[..mode].iter().product();
        let mut out = vec![T::zero(); ik * rest];
        for o in 0..outer {
            for f in 0..ik {
                let dst = (o * ik + f) * inner;
                let src_row = f * rest;
                let src_col = o * inner;
                out[dst..dst + inner]
                    .copy_from_slice(&matrix.data[src_row + src_col..src_row + src_col + inner]);
            }
        }
        Tensor::from_vec(shape, out)
    }

    /// Mode-k product with a matrix `w: J×I_k`; the k-th mode size becomes `J`.
    ///
    /// `[x ×_k w]_{…,j,…} = Σ_{i_k} x_{…,i_k,…} · w_{j,i_k}`.
    pub fn mode_product(&self, mode: usize, w: &Tensor<T>) -> Result<Tensor<T>, ShapeError> {
        let order = self.order();
        if mode >= order {
            return Err(ShapeError::InvalidMode { mode, order });
        }
        if w.order() != 2 {
            return Err(ShapeError::DimMismatch(format!(
                "mode product weight must be a matrix, got order {}",
                w.order()
            )));
        }
        let ik = self.shape[mode];
        let j = w.shape[0];
        if w.shape[1] != ik {
            return Err(ShapeError::DimMismatch(format!(
                "mode-{mode} product: weight has {} columns, mode size is {ik}",
                w.shape[1]
            )));
        }
        let unfolded = self.unfold(mode)?;
        let rest = unfolded.shape[1];
        let prod = crate::matmul::mm(w.data(), unfolded.data(), j, ik, rest);
        let mut new_shape = self.shape.clone();
        new_shape[mode] = j;
        let matrix = Tensor::from_vec(&[j, rest], prod)?;
        Tensor::refold(&matrix, mode, &new_shape)
    }

    /// Mode-k product with a row vector (`J = 1`), then squeeze of that mode.
    pub fn mode_contract(&self, mode: usize, w: &[T]) -> Result<Tensor<T>, ShapeError> {
        let wt = Tensor::from_vec(&[1, w.len()], w.to_vec())?;
        let out = self.mode_product(mode, &wt)?;
        let mut shape = out.shape.clone();
        shape.remove(mode);
        if shape.is_empty() {
            shape.push(1);
        }
        Tensor::from_vec(&shape, out.data)
    }
}

/// Khatri-Rao (column-wise Kronecker) product.
///
/// For `a: I×R`, `b: J×R` the result is `(I·J)×R` with
/// `out[(i·J + j), r] = a[i,r]·b[j,r]`, matching the crate linearization.
pub fn khatri_rao<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>, ShapeError> {
    if a.order() != 2 || b.order() != 2 {
        return Err(ShapeError::DimMismatch(
            "khatri_rao expects two matrices".into(),
        ));
    }
    let (i, ra) = (a.shape[0], a.shape[1]);
    let (j, rb) = (b.shape[0], b.shape[1]);
    if ra != rb {
        return Err(ShapeError::DimMismatch(format!(
            "khatri_rao column counts differ: {ra} vs {rb}"
        )));
    }
    let mut out = vec![T::zero(); i * j * ra];
    for p in 0..i {
        for q in 0..j {
            let row = (p * j + q) * ra;
            let arow = &a.data[p * ra..(p + 1) * ra];
            let brow = &b.data[q * ra..(q + 1) * ra];
            for r in 0..ra {
                out[row + r] = arow[r] * brow[r];
            }
        }
    }
    Tensor::from_vec(&[i * j, ra], out)
}

/// Rank-R factor set of a 3-way kernel: per mode `k`, an `I_k × R` matrix
/// whose r-th column is that mode's rank-r projection vector.
#[derive(Debug, Clone, PartialEq)]
pub struct KruskalFactors<T> {
    factors: [Tensor<T>; 3],
}

impl<T: Scalar> KruskalFactors<T> {
    pub fn new(factors: [Tensor<T>; 3]) -> Result<Self, ShapeError> {
        let r = factors[0].shape().get(1).copied().unwrap_or(0);
        for f in &factors {
            if f.order() != 2 {
                return Err(ShapeError::DimMismatch(
                    "factor matrices must be 2-way".into(),
                ));
            }
            if f.shape()[1] != r {
                return Err(ShapeError::DimMismatch(format!(
                    "factor column counts differ: {} vs {r}",
                    f.shape()[1]
                )));
            }
        }
        if r == 0 {
            return Err(ShapeError::DimMismatch("rank must be at least 1".into()));
        }
        Ok(KruskalFactors { factors })
    }

    pub fn rank(&self) -> usize {
        self.factors[0].shape()[1]
    }

    /// Mode sizes `(I_1, I_2, I_3)` of the reconstructed tensor.
    pub fn dims(&self) -> [usize; 3] {
        [
            self.factors[0].shape()[0],
            self.factors[1].shape()[0],
            self.factors[2].shape()[0],
        ]
    }

    pub fn factor(&self, mode: usize) -> &Tensor<T> {
        &self.factors[mode]
    }

    pub fn factor_mut(&mut self, mode: usize) -> &mut Tensor<T> {
        &mut self.factors[mode]
    }

    pub fn factors(&self) -> &[Tensor<T>; 3] {
        &self.factors
    }

    /// Column `r` of the mode-k factor.
    pub fn column(&self, mode: usize, r: usize) -> Vec<T> {
        let f = &self.factors[mode];
        let (n, rk) = (f.shape()[0], f.shape()[1]);
        (0..n).map(|i| f.data()[i * rk + r]).collect()
    }

    /// Dense reconstruction `W[i,j,c] = Σ_r w1(r)[i]·w2(r)[j]·w3(r)[c]`.
    pub fn reconstruct(&self) -> Tensor<T> {
        let [d1, d2, d3] = self.dims();
        let r = self.rank();
        let (f1, f2, f3) = (&self.factors[0], &self.factors[1], &self.factors[2]);
        let mut out = vec![T::zero(); d1 * d2 * d3];
        for i in 0..d1 {
            for j in 0..d2 {
                let base = (i * d2 + j) * d3;
                for rr in 0..r {
                    let w = f1.data()[i * r + rr] * f2.data()[j * r + rr];
                    let col3 = &f3.data()[..];
                    for c in 0..d3 {
                        out[base + c] += w * col3[c * r + rr];
                    }
                }
            }
        }
        Tensor::from_vec(&[d1, d2, d3], out).expect("factor dims are consistent")
    }

    pub fn map<U: Scalar>(&self, f: impl Fn(T) -> U + Copy) -> KruskalFactors<U> {
        KruskalFactors {
            factors: [
                self.factors[0].map(f),
                self.factors[1].map(f),
                self.factors[2].map(f),
            ],
        }
    }
}

#[cfg(test)]
mod tests;
