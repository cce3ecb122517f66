//! Dense row-major matrix kernels.
//!
//! Everything heavy in this crate (convolution via patch matrices, the
//! pointwise stage of separable evaluation, CP-ALS normal equations) reduces
//! to one of three products on contiguous row-major buffers. The inner loops
//! run over contiguous rows so the compiler can vectorize them; large calls
//! split the output into fixed row bands processed in parallel. Each output
//! element is always accumulated sequentially in the same order, so results
//! are bitwise identical for any thread count.

use rayon::prelude::*;

use crate::scalar::Scalar;

/// Work size (in multiply-accumulates) below which a call stays single-threaded.
const PAR_THRESHOLD: usize = 1 << 18;

/// `c = a · b` with `a: m×k`, `b: k×n`, `c: m×n`.
pub fn mm<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut c = vec![T::zero(); m * n];
    mm_acc(&mut c, a, b, m, k, n);
    c
}

/// `c += a · b` with `a: m×k`, `b: k×n`, `c: m×n`.
pub fn mm_acc<T: Scalar>(c: &mut [T], a: &[T], b: &[T], m: usize, k: usize, n: usize) {
    assert_eq!(a.len(), m * k, "lhs size");
    assert_eq!(b.len(), k * n, "rhs size");
    assert_eq!(c.len(), m * n, "out size");
    if m * k * n >= PAR_THRESHOLD && m > 1 {
        c.par_chunks_mut(n)
            .zip(a.par_chunks(k))
            .for_each(|(crow, arow)| mm_row(crow, arow, b, n));
    } else {
        for (crow, arow) in c.chunks_exact_mut(n).zip(a.chunks_exact(k)) {
            mm_row(crow, arow, b, n);
        }
    }
}

#[inline]
fn mm_row<T: Scalar>(crow: &mut [T], arow: &[T], b: &[T], n: usize) {
    for (p, &apv) in arow.iter().enumerate() {
        let brow = &b[p * n..(p + 1) * n];
        for (cv, &bv) in crow.iter_mut().zip(brow) {
            *cv += apv * bv;
        }
    }
}

/// `c = aᵀ · b` with `a: l×m`, `b: l×n`, `c: m×n`.
///
/// Output row `p` contracts column `p` of `a` against all of `b`; the
/// reduction over `l` runs sequentially per output row.
pub fn mm_at_b<T: Scalar>(a: &[T], b: &[T], l: usize, m: usize, n: usize) -> Vec<T> {
    let mut c = vec![T::zero(); m * n];
    mm_at_b_acc(&mut c, a, b, l, m, n);
    c
}

/// `c += aᵀ · b` (same shapes as [`mm_at_b`]).
pub fn mm_at_b_acc<T: Scalar>(c: &mut [T], a: &[T], b: &[T], l: usize, m: usize, n: usize) {
    assert_eq!(a.len(), l * m, "lhs size");
    assert_eq!(b.len(), l * n, "rhs size");
    assert_eq!(c.len(), m * n, "out size");
    let row = |crow: &mut [T], p: usize| {
        for q in 0..l {
            let apv = a[q * m + p];
            let brow = &b[q * n..(q + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv += apv * bv;
            }
        }
    };
    if l * m * n >= PAR_THRESHOLD && m > 1 {
        c.par_chunks_mut(n).enumerate().for_each(|(p, crow)| row(crow, p));
    } else {
        for (p, crow) in c.chunks_exact_mut(n).enumerate() {
            row(crow, p);
        }
    }
}

/// `c = a · bᵀ` with `a: m×k`, `b: n×k`, `c: m×n`.
pub fn mm_a_bt<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    assert_eq!(a.len(), m * k, "lhs size");
    assert_eq!(b.len(), n * k, "rhs size");
    let mut c = vec![T::zero(); m * n];
    let row = |crow: &mut [T], arow: &[T]| {
        for (cv, brow) in crow.iter_mut().zip(b.chunks_exact(k)) {
            let mut acc = T::zero();
            for (&av, &bv) in arow.iter().zip(brow) {
                acc += av * bv;
            }
            *cv += acc;
        }
    };
    if m * k * n >= PAR_THRESHOLD && m > 1 {
        c.par_chunks_mut(n)
            .zip(a.par_chunks(k))
            .for_each(|(crow, arow)| row(crow, arow));
    } else {
        for (crow, arow) in c.chunks_exact_mut(n).zip(a.chunks_exact(k)) {
            row(crow, arow);
        }
    }
    c
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for p in 0..k {
                for j in 0..n {
                    c[i * n + j] += a[i * k + p] * b[p * n + j];
                }
            }
        }
        c
    }

    #[test]
    fn products_match_naive() {
        let m = 5;
        let k = 7;
        let n = 4;
        let a: Vec<f64> = (0..m * k).map(|i| (i as f64 * 0.37).sin()).collect();
        let b: Vec<f64> = (0..k * n).map(|i| (i as f64 * 0.61).cos()).collect();
        let want = naive(&a, &b, m, k, n);
        assert_eq!(mm(&a, &b, m, k, n), want);

        // aᵀ·b through the transposed layout.
        let mut at = vec![0.0; k * m];
        for i in 0..m {
            for p in 0..k {
                at[p * m + i] = a[i * k + p];
            }
        }
        let got = mm_at_b(&at, &b, k, m, n);
        for (x, y) in got.iter().zip(&want) {
            assert!((x - y).abs() < 1e-12);
        }

        // a·bᵀ through the transposed layout.
        let mut bt = vec![0.0; n * k];
        for p in 0..k {
            for j in 0..n {
                bt[j * k + p] = b[p * n + j];
            }
        }
        let got = mm_a_bt(&a, &bt, m, k, n);
        for (x, y) in got.iter().zip(&want) {
            assert!((x - y).abs() < 1e-12);
        }
    }
}
