use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::oracles::{max_rel_err, naive_khatri_rao, naive_mode_product, naive_unfold};

fn random_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
}

/// The 2×2×2 tensor with values 1..8 laid out so that the first index moves
/// first through the values: X[i,j,k] = (i+1) + 2j + 4k (0-based indices).
fn demo_cube() -> Tensor<f64> {
    Tensor::from_fn(&[2, 2, 2], |idx| (idx[0] + 1 + 2 * idx[1] + 4 * idx[2]) as f64)
}

#[test]
fn matrix_unfolds_to_itself_along_mode_0() {
    let m = Tensor::from_vec(&[2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
    assert_eq!(m.unfold(0).unwrap(), m);
}

#[test]
fn cube_mode3_unfold_matches_fiber_enumeration() {
    let x = demo_cube();
    let got = x.unfold(2).unwrap();
    let want = naive_unfold(&x, 2);
    assert_eq!(got, want);
    // Rows are the two channel slices flattened in index order.
    assert_eq!(got.shape(), &[2, 4]);
    assert_eq!(got.data(), &[1.0, 3.0, 2.0, 4.0, 5.0, 7.0, 6.0, 8.0]);
}

#[test]
fn unfold_refold_roundtrip_every_mode() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let x = random_tensor(&[3, 4, 5], &mut rng);
    for mode in 0..3 {
        let m = x.unfold(mode).unwrap();
        let back = Tensor::refold(&m, mode, x.shape()).unwrap();
        assert_eq!(back, x, "mode {mode}");
    }
}

#[test]
fn unfold_rejects_invalid_mode() {
    let x = demo_cube();
    assert_eq!(
        x.unfold(3),
        Err(ShapeError::InvalidMode { mode: 3, order: 3 })
    );
}

#[test]
fn cube_contracted_along_mode3_with_ones() {
    let x = demo_cube();
    let got = x.mode_contract(2, &[1.0, 1.0]).unwrap();
    assert_eq!(got.shape(), &[2, 2]);
    assert_eq!(got.data(), &[6.0, 10.0, 8.0, 12.0]);
    // Same thing through the direct summation oracle, without the squeeze.
    let w = Tensor::from_vec(&[1, 2], vec![1.0, 1.0]).unwrap();
    let oracle = naive_mode_product(&x, 2, &w);
    assert_eq!(oracle.data(), got.data());
}

#[test]
fn identity_mode_product_is_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let x = random_tensor(&[2, 3, 4], &mut rng);
    for mode in 0..3 {
        let n = x.shape()[mode];
        let eye = Tensor::from_fn(&[n, n], |idx| if idx[0] == idx[1] { 1.0 } else { 0.0 });
        let y = x.mode_product(mode, &eye).unwrap();
        assert_eq!(y, x);
    }
}

#[test]
fn mode_product_matches_naive_summation() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for shape in [[2usize, 3, 4], [6, 6, 6], [5, 2, 6]] {
        let x = random_tensor(&shape, &mut rng);
        for mode in 0..3 {
            let w = random_tensor(&[3, shape[mode]], &mut rng);
            let fast = x.mode_product(mode, &w).unwrap();
            let slow = naive_mode_product(&x, mode, &w);
            assert!(max_rel_err(&fast, &slow) <= 1e-12, "mode {mode}");
        }
    }
}

#[test]
fn mode_product_order_independent() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let x = random_tensor(&[4, 3, 5], &mut rng);
    for (k1, k2) in [(0usize, 1usize), (0, 2), (1, 2)] {
        let a = random_tensor(&[2, x.shape()[k1]], &mut rng);
        let b = random_tensor(&[3, x.shape()[k2]], &mut rng);
        let ab = x.mode_product(k1, &a).unwrap().mode_product(k2, &b).unwrap();
        let ba = x.mode_product(k2, &b).unwrap().mode_product(k1, &a).unwrap();
        assert!(max_rel_err(&ab, &ba) <= 1e-10, "modes {k1},{k2}");
    }
}

#[test]
fn mode_product_rejects_mismatched_width() {
    let x = demo_cube();
    let w = Tensor::from_vec(&[1, 3], vec![1.0; 3]).unwrap();
    assert!(x.mode_product(0, &w).is_err());
}

#[test]
fn khatri_rao_single_columns() {
    let a = Tensor::from_vec(&[2, 1], vec![1.0, 2.0]).unwrap();
    let b = Tensor::from_vec(&[2, 1], vec![3.0, 4.0]).unwrap();
    let kr = khatri_rao(&a, &b).unwrap();
    assert_eq!(kr.shape(), &[4, 1]);
    assert_eq!(kr.data(), &[3.0, 4.0, 6.0, 8.0]);
    assert_eq!(kr, naive_khatri_rao(&a, &b));
}

#[test]
fn khatri_rao_unit_vectors_give_one_hot() {
    let a = Tensor::from_vec(&[3, 1], vec![0.0, 1.0, 0.0]).unwrap();
    let b = Tensor::from_vec(&[2, 1], vec![1.0, 0.0]).unwrap();
    let kr = khatri_rao(&a, &b).unwrap();
    let ones: Vec<usize> = kr
        .data()
        .iter()
        .enumerate()
        .filter(|(_, &v)| v != 0.0)
        .map(|(i, _)| i)
        .collect();
    assert_eq!(ones, vec![2]); // row 1·2 + 0
    assert_eq!(kr.data()[2], 1.0);
}

#[test]
fn khatri_rao_shapes_and_errors() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let a = random_tensor(&[3, 2], &mut rng);
    let b = random_tensor(&[4, 2], &mut rng);
    assert_eq!(khatri_rao(&a, &b).unwrap().shape(), &[12, 2]);
    let c = random_tensor(&[4, 3], &mut rng);
    assert!(khatri_rao(&a, &c).is_err());
}

#[test]
fn kruskal_rank1_reconstruction() {
    let f = KruskalFactors::new([
        Tensor::from_vec(&[2, 1], vec![1.0, 2.0]).unwrap(),
        Tensor::from_vec(&[2, 1], vec![3.0, 4.0]).unwrap(),
        Tensor::from_vec(&[1, 1], vec![5.0]).unwrap(),
    ])
    .unwrap();
    let w = f.reconstruct();
    assert_eq!(w.shape(), &[2, 2, 1]);
    assert_eq!(w.data(), &[15.0, 20.0, 30.0, 40.0]);
}

#[test]
fn kruskal_zero_factors_give_zero_tensor() {
    let f = KruskalFactors::new([
        Tensor::<f64>::zeros(&[3, 1]),
        Tensor::zeros(&[3, 1]),
        Tensor::zeros(&[2, 1]),
    ])
    .unwrap();
    assert!(f.reconstruct().data().iter().all(|&v| v == 0.0));
}

#[test]
fn kruskal_inner_product_equals_staged_contraction() {
    // ⟨X, W̃⟩ must equal Σ_r X ×₁ w1ᵀ ×₂ w2ᵀ ×₃ w3ᵀ.
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let x = random_tensor(&[3, 3, 4], &mut rng);
    let f = KruskalFactors::new([
        random_tensor(&[3, 2], &mut rng),
        random_tensor(&[3, 2], &mut rng),
        random_tensor(&[4, 2], &mut rng),
    ])
    .unwrap();
    let w = f.reconstruct();
    let dot: f64 = x.data().iter().zip(w.data()).map(|(a, b)| a * b).sum();
    let mut staged = 0.0;
    for r in 0..f.rank() {
        let t = x
            .mode_contract(0, &f.column(0, r))
            .unwrap()
            .mode_contract(0, &f.column(1, r))
            .unwrap()
            .mode_contract(0, &f.column(2, r))
            .unwrap();
        staged += t.data()[0];
    }
    assert!((dot - staged).abs() <= 1e-10 * dot.abs().max(1.0));
}

#[test]
fn kruskal_contribution_scales_linearly_per_rank() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let base = KruskalFactors::new([
        random_tensor(&[3, 2], &mut rng),
        random_tensor(&[3, 2], &mut rng),
        random_tensor(&[5, 2], &mut rng),
    ])
    .unwrap();
    let full = base.reconstruct();
    // Scale rank-0's mode-1 column by alpha: the rank-0 contribution scales.
    let alpha = 2.5;
    let mut scaled = base.clone();
    for i in 0..3 {
        let v = scaled.factor(0).at(&[i, 0]).unwrap();
        scaled.factor_mut(0).set(&[i, 0], v * alpha).unwrap();
    }
    let only_r0 = {
        let mut f = base.clone();
        for mode in 0..3 {
            let dim = f.factor(mode).shape()[0];
            for i in 0..dim {
                f.factor_mut(mode).set(&[i, 1], 0.0).unwrap();
            }
        }
        f.reconstruct()
    };
    let got = scaled.reconstruct();
    for ((g, f), r0) in got.data().iter().zip(full.data()).zip(only_r0.data()) {
        let want = f + (alpha - 1.0) * r0;
        assert!((g - want).abs() < 1e-12);
    }
}

#[test]
fn cp_als_recovers_exact_rank1() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let truth = KruskalFactors::new([
        random_tensor(&[3, 1], &mut rng),
        random_tensor(&[3, 1], &mut rng),
        random_tensor(&[4, 1], &mut rng),
    ])
    .unwrap();
    let target = truth.reconstruct();
    let (f, report) = cp_als(&target, 1, &CpAlsOptions::default()).unwrap();
    assert!(report.final_fit >= 1.0 - 1e-6, "fit {}", report.final_fit);
    assert!(report.converged);
    assert_eq!(f.rank(), 1);
}

#[test]
fn cp_als_recovers_exact_rank2() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let truth = KruskalFactors::new([
        random_tensor(&[3, 2], &mut rng),
        random_tensor(&[3, 2], &mut rng),
        random_tensor(&[6, 2], &mut rng),
    ])
    .unwrap();
    let target = truth.reconstruct();
    let opts = CpAlsOptions {
        max_iters: 500,
        tol: 1e-10,
        seed: 1,
    };
    let (_, report) = cp_als(&target, 2, &opts).unwrap();
    assert!(report.final_fit >= 1.0 - 1e-4, "fit {}", report.final_fit);
}

#[test]
fn cp_als_fit_monotone_in_rank() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let truth = KruskalFactors::new([
        random_tensor(&[3, 1], &mut rng),
        random_tensor(&[3, 1], &mut rng),
        random_tensor(&[5, 1], &mut rng),
    ])
    .unwrap();
    let target = truth.reconstruct();
    let opts = CpAlsOptions {
        max_iters: 400,
        tol: 1e-12,
        seed: 3,
    };
    let (_, low) = cp_als(&target, 1, &opts).unwrap();
    let (_, high) = cp_als(&target, 2, &opts).unwrap();
    assert!(
        high.final_fit >= low.final_fit - 1e-8,
        "fit dropped: {} -> {}",
        low.final_fit,
        high.final_fit
    );
}

#[test]
fn cp_als_error_never_increases_across_sweeps() {
    let mut rng = ChaCha8Rng::seed_from_u64(24);
    let target = random_tensor(&[4, 4, 4], &mut rng);
    let opts = CpAlsOptions {
        max_iters: 60,
        tol: 1e-14,
        seed: 5,
    };
    let (_, report) = cp_als(&target, 3, &opts).unwrap();
    for w in report.fit_trace.windows(2) {
        assert!(w[1] >= w[0] - 1e-10, "fit regressed: {} -> {}", w[0], w[1]);
    }
}

#[test]
fn cp_als_rejects_bad_inputs() {
    let m = Tensor::<f64>::zeros(&[2, 2]);
    assert!(cp_als(&m, 1, &CpAlsOptions::default()).is_err());
    let t = Tensor::<f64>::zeros(&[2, 2, 2]);
    assert!(cp_als(&t, 0, &CpAlsOptions::default()).is_err());
}

#[test]
fn checked_access_reports_out_of_range() {
    let x = demo_cube();
    assert!(x.at(&[0, 0, 0]).is_ok());
    assert!(matches!(
        x.at(&[0, 0, 2]),
        Err(ShapeError::OutOfRange { .. })
    ));
    assert!(x.at(&[0, 0]).is_err());
}

#[test]
fn squeeze_drops_unit_modes() {
    let x = Tensor::from_vec(&[1, 3, 1, 2], (0..6).map(|v| v as f64).collect()).unwrap();
    assert_eq!(x.squeeze().shape(), &[3, 2]);
    let s = Tensor::from_vec(&[1, 1], vec![5.0]).unwrap();
    assert_eq!(s.squeeze().shape(), &[1]);
}
