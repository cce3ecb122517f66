//! Minimal dense solvers for the decomposition paths: a Cholesky solve for
//! the R×R normal equations and a cyclic Jacobi eigensolver used to seed
//! factors with leading singular vectors. Matrices here are tiny (R, d, d²
//! or the channel count), so simplicity beats sophistication.

use crate::scalar::Scalar;

/// Solve `A X = B` for symmetric positive-definite `A: n×n`, `B: n×m`,
/// in place over `b`. Returns `false` when the factorization breaks down.
pub(crate) fn solve_spd_multi<T: Scalar>(a: &[T], b: &mut [T], n: usize, m: usize) -> bool {
    debug_assert_eq!(a.len(), n * n);
    debug_assert_eq!(b.len(), n * m);
    // Cholesky A = L·Lᵀ, lower triangle packed row-major.
    let mut l = vec![T::zero(); n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[i * n + j];
            for p in 0..j {
                s -= l[i * n + p] * l[j * n + p];
            }
            if i == j {
                if s <= T::zero() {
                    return false;
                }
                l[i * n + i] = s.sqrt();
            } else {
                l[i * n + j] = s / l[j * n + j];
            }
        }
    }
    // Forward then backward substitution, all right-hand sides at once.
    for i in 0..n {
        for p in 0..i {
            let lip = l[i * n + p];
            let (head, tail) = b.split_at_mut(i * m);
            let prow = &head[p * m..(p + 1) * m];
            for (bv, &pv) in tail[..m].iter_mut().zip(prow) {
                *bv -= lip * pv;
            }
        }
        let d = l[i * n + i];
        for bv in b[i * m..(i + 1) * m].iter_mut() {
            *bv /= d;
        }
    }
    for i in (0..n).rev() {
        for p in (i + 1)..n {
            let lpi = l[p * n + i];
            let (head, tail) = b.split_at_mut(p * m);
            let irow = &mut head[i * m..(i + 1) * m];
            for (bv, &pv) in irow.iter_mut().zip(&tail[..m]) {
                *bv -= lpi * pv;
            }
        }
        let d = l[i * n + i];
        for bv in b[i * m..(i + 1) * m].iter_mut() {
            *bv /= d;
        }
    }
    true
}

/// Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.
/// Returns eigenvalues (descending) and the matching eigenvectors as columns
/// of a row-major n×n matrix.
fn sym_eig<T: Scalar>(a: &[T], n: usize) -> (Vec<T>, Vec<T>) {
    let mut m = a.to_vec();
    let mut v = vec![T::zero(); n * n];
    for i in 0..n {
        v[i * n + i] = T::one();
    }
    let off = |m: &[T]| -> f64 {
        let mut s = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                let x = m[i * n + j].to_f64();
                s += x * x;
            }
        }
        s
    };
    let scale = a.iter().map(|&x| x.to_f64().abs()).fold(0.0, f64::max).max(1e-300);
    for _sweep in 0..60 {
        if off(&m) <= (1e-28 * scale * scale) * (n * n) as f64 {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[p * n + q];
                if apq.to_f64().abs() <= 1e-300 {
                    continue;
                }
                let app = m[p * n + p];
                let aqq = m[q * n + q];
                let theta = (aqq - app).to_f64() / (2.0 * apq.to_f64());
                let t = {
                    let s = if theta >= 0.0 { 1.0 } else { -1.0 };
                    s / (theta.abs() + (theta * theta + 1.0).sqrt())
                };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                let (c, s) = (T::from_f64(c), T::from_f64(s));
                for k in 0..n {
                    let mkp = m[k * n + p];
                    let mkq = m[k * n + q];
                    m[k * n + p] = c * mkp - s * mkq;
                    m[k * n + q] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[p * n + k];
                    let mqk = m[q * n + k];
                    m[p * n + k] = c * mpk - s * mqk;
                    m[q * n + k] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        m[j * n + j]
            .to_f64()
            .partial_cmp(&m[i * n + i].to_f64())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let vals = order.iter().map(|&i| m[i * n + i]).collect();
    let mut vecs = vec![T::zero(); n * n];
    for (dst, &src) in order.iter().enumerate() {
        for k in 0..n {
            vecs[k * n + dst] = v[k * n + src];
        }
    }
    (vals, vecs)
}

/// Leading `r` left singular vectors of a row-major `rows×cols` matrix,
/// returned as columns of a `rows×r` matrix. Computed from the smaller Gram
/// matrix so wide unfoldings stay cheap. Columns beyond the numerical rank
/// are left zero for the caller to fill.
pub(crate) fn leading_left_singular_vectors<T: Scalar>(
    m: &[T],
    rows: usize,
    cols: usize,
    r: usize,
) -> Vec<T> {
    let take = r.min(rows);
    let mut out = vec![T::zero(); rows * r];
    if take == 0 {
        return out;
    }
    if rows <= cols {
        // Gram = M·Mᵀ (rows×rows); left singular vectors are its eigenvectors.
        let gram = crate::matmul::mm_a_bt(m, m, rows, cols, rows);
        let (vals, vecs) = sym_eig(&gram, rows);
        for j in 0..take {
            if vals[j].to_f64() <= 0.0 {
                break;
            }
            for i in 0..rows {
                out[i * r + j] = vecs[i * rows + j];
            }
        }
    } else {
        // Gram = Mᵀ·M (cols×cols); map right vectors through M and normalize.
        let gram = crate::matmul::mm_at_b(m, m, rows, cols, cols);
        let (vals, vecs) = sym_eig(&gram, cols);
        for j in 0..take.min(cols) {
            let sigma2 = vals[j].to_f64();
            if sigma2 <= 1e-24 {
                break;
            }
            let mut u = vec![T::zero(); rows];
            for i in 0..rows {
                let mut s = T::zero();
                for k in 0..cols {
                    s += m[i * cols + k] * vecs[k * cols + j];
                }
                u[i] = s;
            }
            let norm = T::from_f64(u.iter().map(|&x| x.to_f64().powi(2)).sum::<f64>().sqrt());
            if norm.to_f64() > 0.0 {
                for i in 0..rows {
                    out[i * r + j] = u[i] / norm;
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spd_solve_recovers_solution() {
        // A = Bᵀ·B + I is SPD.
        let b = [1.0, 2.0, 0.5, -1.0, 3.0, 0.25, 0.0, 1.0, -2.0f64];
        let mut a = [0.0f64; 9];
        for i in 0..3 {
            for j in 0..3 {
                for k in 0..3 {
                    a[i * 3 + j] += b[k * 3 + i] * b[k * 3 + j];
                }
            }
            a[i * 3 + i] += 1.0;
        }
        let x_true = [1.0, -2.0, 0.5, 0.0, 3.0, 1.0f64];
        let mut rhs = [0.0f64; 6];
        for i in 0..3 {
            for c in 0..2 {
                for j in 0..3 {
                    rhs[i * 2 + c] += a[i * 3 + j] * x_true[j * 2 + c];
                }
            }
        }
        assert!(solve_spd_multi(&a, &mut rhs, 3, 2));
        for (got, want) in rhs.iter().zip(&x_true) {
            assert!((got - want).abs() < 1e-10, "{got} vs {want}");
        }
    }

    #[test]
    fn singular_matrix_reports_failure() {
        let a = [1.0, 1.0, 1.0, 1.0f64];
        let mut rhs = [1.0, 1.0f64];
        assert!(!solve_spd_multi(&a, &mut rhs, 2, 1));
    }

    #[test]
    fn leading_vectors_span_dominant_direction() {
        // Rank-1 matrix u·vᵀ: the single left singular vector is ±u/‖u‖.
        let u = [3.0, 4.0f64];
        let v = [1.0, 2.0, 2.0f64];
        let mut m = [0.0f64; 6];
        for i in 0..2 {
            for j in 0..3 {
                m[i * 3 + j] = u[i] * v[j];
            }
        }
        let lv = leading_left_singular_vectors(&m, 2, 3, 1);
        let dot: f64 = lv[0] * 0.6 + lv[1] * 0.8;
        assert!((dot.abs() - 1.0).abs() < 1e-9, "dot {dot}");
    }
}
