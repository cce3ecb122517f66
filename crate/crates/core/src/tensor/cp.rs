//! Rank-R canonical decomposition of 3-way kernels by alternating least
//! squares. Factors are seeded from leading singular vectors of each mode
//! unfolding; each sweep solves the Khatri-Rao normal equations per mode and
//! re-balances column norms into mode 3 so scale cannot drift.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{khatri_rao, KruskalFactors, ShapeError, Tensor};
use crate::matmul::{mm, mm_at_b};
use crate::scalar::Scalar;

#[derive(Debug, Clone)]
pub struct CpAlsOptions {
    pub max_iters: usize,
    /// Stop when the relative fit change between sweeps drops below this.
    pub tol: f64,
    /// Seed for the random columns used when the rank exceeds a mode size.
    pub seed: u64,
}

impl Default for CpAlsOptions {
    fn default() -> Self {
        CpAlsOptions {
            max_iters: 200,
            tol: 1e-6,
            seed: 0,
        }
    }
}

/// Diagnostics of one decomposition run.
#[derive(Debug, Clone)]
pub struct CpAlsReport {
    pub iterations_run: usize,
    /// `1 − ‖X − X̂‖ / ‖X‖`, clamped to `[0, 1]` only by the math itself.
    pub final_fit: f64,
    pub converged: bool,
    /// True when a singular normal-equation system needed a ridge term.
    pub ridge_applied: bool,
    /// Fit after every sweep, for convergence inspection.
    pub fit_trace: Vec<f64>,
}

/// Decompose a 3-way tensor into `rank` rank-one terms.
pub fn cp_als<T: Scalar>(
    target: &Tensor<T>,
    rank: usize,
    opts: &CpAlsOptions,
) -> Result<(KruskalFactors<T>, CpAlsReport), ShapeError> {
    if target.order() != 3 {
        return Err(ShapeError::DimMismatch(format!(
            "cp_als expects a 3-way tensor, got order {}",
            target.order()
        )));
    }
    if rank == 0 {
        return Err(ShapeError::DimMismatch("rank must be at least 1".into()));
    }
    if opts.max_iters == 0 || !(opts.tol > 0.0) {
        return Err(ShapeError::DimMismatch(
            "max_iters must be ≥ 1 and tol > 0".into(),
        ));
    }

    let dims = [target.shape()[0], target.shape()[1], target.shape()[2]];
    let norm_x = target.frobenius_norm();

    // Unfoldings are reused by every sweep's MTTKRP.
    let unfoldings: Vec<Tensor<T>> = (0..3)
        .map(|k| target.unfold(k))
        .collect::<Result<_, _>>()?;

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut factors: Vec<Tensor<T>> = (0..3)
        .map(|k| init_factor(&unfoldings[k], dims[k], rank, &mut rng))
        .collect();

    let mut report = CpAlsReport {
        iterations_run: 0,
        final_fit: 0.0,
        converged: false,
        ridge_applied: false,
        fit_trace: Vec::new(),
    };
    let mut fit_old = f64::NAN;

    for sweep in 0..opts.max_iters {
        for k in 0..3 {
            let (a, b) = match k {
                0 => (&factors[1], &factors[2]),
                1 => (&factors[0], &factors[2]),
                _ => (&factors[0], &factors[1]),
            };
            let kr = khatri_rao(a, b)?;
            let rest = kr.shape()[0];
            // MTTKRP: unfolding (I_k × rest) · KR (rest × R).
            let mttkrp = mm(unfoldings[k].data(), kr.data(), dims[k], rest, rank);
            // Normal matrix: Hadamard of the other two Gram matrices.
            let ga = gram(a, rank);
            let gb = gram(b, rank);
            let mut v: Vec<T> = ga.iter().zip(&gb).map(|(&x, &y)| x * y).collect();

            // Solve V · Aᵀ = MTTKRPᵀ, adding a ridge only when V is singular.
            let mut rhs = transpose(&mttkrp, dims[k], rank);
            if !super::solve_spd_multi(&v, &mut rhs, rank, dims[k]) {
                report.ridge_applied = true;
                let scale = (0..rank)
                    .map(|i| v[i * rank + i].to_f64().abs())
                    .fold(0.0, f64::max)
                    .max(1.0);
                let mut ridge = 1e-10 * scale;
                loop {
                    let mut vr = v.clone();
                    for i in 0..rank {
                        vr[i * rank + i] += T::from_f64(ridge);
                    }
                    rhs = transpose(&mttkrp, dims[k], rank);
                    if super::solve_spd_multi(&vr, &mut rhs, rank, dims[k]) {
                        v = vr;
                        break;
                    }
                    ridge *= 100.0;
                    if ridge > scale {
                        // Give up on this mode for the sweep; keep old factor.
                        rhs = transpose(factors[k].data(), dims[k], rank);
                        break;
                    }
                }
                let _ = v;
            }
            factors[k] = Tensor::from_vec(&[dims[k], rank], transpose(&rhs, rank, dims[k]))?;
        }

        rebalance_into_mode3(&mut factors, rank);

        let model = KruskalFactors::new([
            factors[0].clone(),
            factors[1].clone(),
            factors[2].clone(),
        ])?;
        let fit = fit_of(target, &model, norm_x);
        report.fit_trace.push(fit);
        report.iterations_run = sweep + 1;
        report.final_fit = fit;
        if sweep > 0 && (fit - fit_old).abs() < opts.tol {
            report.converged = true;
            break;
        }
        fit_old = fit;
    }

    let factors = KruskalFactors::new([
        factors[0].clone(),
        factors[1].clone(),
        factors[2].clone(),
    ])?;
    Ok((factors, report))
}

fn fit_of<T: Scalar>(target: &Tensor<T>, model: &KruskalFactors<T>, norm_x: f64) -> f64 {
    let approx = model.reconstruct();
    let mut resid2 = 0.0f64;
    for (&t, &a) in target.data().iter().zip(approx.data()) {
        let d = t.to_f64() - a.to_f64();
        resid2 += d * d;
    }
    let resid = resid2.sqrt();
    if norm_x == 0.0 {
        if resid == 0.0 {
            1.0
        } else {
            0.0
        }
    } else {
        1.0 - resid / norm_x
    }
}

fn gram<T: Scalar>(f: &Tensor<T>, rank: usize) -> Vec<T> {
    mm_at_b(f.data(), f.data(), f.shape()[0], rank, rank)
}

fn transpose<T: Scalar>(m: &[T], rows: usize, cols: usize) -> Vec<T> {
    let mut out = vec![T::zero(); m.len()];
    for i in 0..rows {
        for j in 0..cols {
            out[j * rows + i] = m[i * cols + j];
        }
    }
    out
}

/// Truncated left singular vectors of the unfolding; columns past the
/// numerical rank (or the mode size) fall back to seeded Gaussian noise.
fn init_factor<T: Scalar>(
    unfolding: &Tensor<T>,
    dim: usize,
    rank: usize,
    rng: &mut ChaCha8Rng,
) -> Tensor<T> {
    let rest = unfolding.shape()[1];
    let mut cols = super::leading_left_singular_vectors(unfolding.data(), dim, rest, rank);
    for r in 0..rank {
        let zero = (0..dim).all(|i| cols[i * rank + r] == T::zero());
        if zero {
            for i in 0..dim {
                let g: f64 = rng.sample(StandardNormal);
                cols[i * rank + r] = T::from_f64(g);
            }
        }
    }
    Tensor::from_vec(&[dim, rank], cols).expect("factor shape")
}

/// Absorb the column norms of modes 1 and 2 into mode 3.
fn rebalance_into_mode3<T: Scalar>(factors: &mut [Tensor<T>], rank: usize) {
    for r in 0..rank {
        let mut carry = 1.0f64;
        for k in 0..2 {
            let dim = factors[k].shape()[0];
            let norm = (0..dim)
                .map(|i| factors[k].data()[i * rank + r].to_f64().powi(2))
                .sum::<f64>()
                .sqrt();
            if norm > 0.0 {
                let inv = T::from_f64(1.0 / norm);
                for i in 0..dim {
                    factors[k].data_mut()[i * rank + r] *= inv;
                }
                carry *= norm;
            }
        }
        let dim = factors[2].shape()[0];
        let c = T::from_f64(carry);
        for i in 0..dim {
            factors[2].data_mut()[i * rank + r] *= c;
        }
    }
}
