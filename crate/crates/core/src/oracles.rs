//! Slow, obviously-correct reference implementations used by the test
//! suites. Everything here follows the definitions index-by-index with no
//! shared code with the fast paths, so agreement between the two is evidence,
//! not tautology. Nothing in this module is meant for production use.

use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Enumerate mode-k fibers one index tuple at a time.
pub fn naive_unfold<T: Scalar>(x: &Tensor<T>, mode: usize) -> Tensor<T> {
    let shape = x.shape().to_vec();
    let ik = shape[mode];
    let rest: usize = x.len() / ik;
    let mut out = Tensor::zeros(&[ik, rest]);
    let mut idx = vec![0usize; shape.len()];
    loop {
        // Column index: remaining indices, original order, last fastest.
        let mut col = 0usize;
        for (ax, &i) in idx.iter().enumerate() {
            if ax != mode {
                col = col * shape[ax] + i;
            }
        }
        let v = x.at(&idx).unwrap();
        out.set(&[idx[mode], col], v).unwrap();
        if !advance(&mut idx, &shape) {
            break;
        }
    }
    out
}

/// Direct summation form of the mode-k product.
pub fn naive_mode_product<T: Scalar>(x: &Tensor<T>, mode: usize, w: &Tensor<T>) -> Tensor<T> {
    let mut shape = x.shape().to_vec();
    let ik = shape[mode];
    let j = w.shape()[0];
    shape[mode] = j;
    let mut out = Tensor::zeros(&shape);
    let mut idx = vec![0usize; shape.len()];
    loop {
        let mut acc = T::zero();
        let mut src = idx.clone();
        for i in 0..ik {
            src[mode] = i;
            acc += x.at(&src).unwrap() * w.at(&[idx[mode], i]).unwrap();
        }
        out.set(&idx, acc).unwrap();
        if !advance(&mut idx, &shape) {
            break;
        }
    }
    out
}

/// Khatri-Rao by explicit outer products.
pub fn naive_khatri_rao<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Tensor<T> {
    let (i, r) = (a.shape()[0], a.shape()[1]);
    let j = b.shape()[0];
    let mut out = Tensor::zeros(&[i * j, r]);
    for rr in 0..r {
        for p in 0..i {
            for q in 0..j {
                let v = a.at(&[p, rr]).unwrap() * b.at(&[q, rr]).unwrap();
                out.set(&[p * j + q, rr], v).unwrap();
            }
        }
    }
    out
}

/// Zero-padded stride-1 cross-correlation, six nested loops.
///
/// `x: (B, H, W, C)`, `w: (kh, kw, C, N)`, `bias: N`. Padding puts
/// `(k−1)/2` rows/cols before and `k/2` after, so output size equals input.
pub fn naive_conv2d<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, bias: &[T]) -> Tensor<T> {
    let (b, h, wd, c) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (kh, kw, wc, n) = (w.shape()[0], w.shape()[1], w.shape()[2], w.shape()[3]);
    assert_eq!(c, wc);
    let (ph, pw) = ((kh - 1) / 2, (kw - 1) / 2);
    let mut out = Tensor::zeros(&[b, h, wd, n]);
    for bb in 0..b {
        for y in 0..h {
            for xx in 0..wd {
                for nn in 0..n {
                    let mut acc = bias[nn];
                    for di in 0..kh {
                        for dj in 0..kw {
                            let sy = y as isize + di as isize - ph as isize;
                            let sx = xx as isize + dj as isize - pw as isize;
                            if sy < 0 || sx < 0 || sy >= h as isize || sx >= wd as isize {
                                continue;
                            }
                            for cc in 0..c {
                                acc += x.at(&[bb, sy as usize, sx as usize, cc]).unwrap()
                                    * w.at(&[di, dj, cc, nn]).unwrap();
                            }
                        }
                    }
                    out.set(&[bb, y, xx, nn], acc).unwrap();
                }
            }
        }
    }
    out
}

/// 2×2/stride-2 max pooling by window scan.
pub fn naive_maxpool2x2<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let (b, h, w, n) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let mut out = Tensor::zeros(&[b, h / 2, w / 2, n]);
    for bb in 0..b {
        for y in 0..h / 2 {
            for xx in 0..w / 2 {
                for nn in 0..n {
                    let mut m = x.at(&[bb, 2 * y, 2 * xx, nn]).unwrap();
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let v = x.at(&[bb, 2 * y + dy, 2 * xx + dx, nn]).unwrap();
                        if v > m {
                            m = v;
                        }
                    }
                    out.set(&[bb, y, xx, nn], m).unwrap();
                }
            }
        }
    }
    out
}

/// Softmax cross-entropy evaluated with compensated f64 summation; an
/// independent route for checking the stable fast path.
pub fn naive_softmax_xent(logits: &[f64], label: usize) -> (f64, Vec<f64>) {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    // Kahan summation of the partition function.
    let mut sum = 0.0;
    let mut comp = 0.0;
    for &e in &exps {
        let y = e - comp;
        let t = sum + y;
        comp = (t - sum) - y;
        sum = t;
    }
    let probs: Vec<f64> = exps.iter().map(|&e| e / sum).collect();
    let loss = -(logits[label] - max - sum.ln());
    (loss, probs)
}

/// Relative difference with an absolute floor to keep near-zero values sane.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-12)
}

/// Largest elementwise [`rel_err`] between two equal-shaped tensors.
pub fn max_rel_err<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> f64 {
    assert_eq!(a.shape(), b.shape(), "shape mismatch in comparison");
    a.data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| rel_err(x.to_f64(), y.to_f64()))
        .fold(0.0, f64::max)
}

/// Central finite difference of a scalar function with respect to one slot
/// of a mutable buffer.
pub fn central_diff<F: FnMut(&mut [f64]) -> f64>(
    buf: &mut [f64],
    slot: usize,
    step: f64,
    mut f: F,
) -> f64 {
    let orig = buf[slot];
    buf[slot] = orig + step;
    let up = f(buf);
    buf[slot] = orig - step;
    let down = f(buf);
    buf[slot] = orig;
    (up - down) / (2.0 * step)
}

fn advance(idx: &mut [usize], shape: &[usize]) -> bool {
    for ax in (0..shape.len()).rev() {
        idx[ax] += 1;
        if idx[ax] < shape[ax] {
            return true;
        }
        idx[ax] = 0;
    }
    false
}
