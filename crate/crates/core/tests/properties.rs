use std::sync::Arc;

use nalgebra::DMatrix;
use proptest::prelude::*;

use shiftpred::data::split_folds;
use shiftpred::intervals::{calibrate_bounds, predictive_interval, BoundRule};
use shiftpred::nuisance::{entropy_balance, fit_density_ratio, BalanceConfig, Clip};
use shiftpred::sim::{build_pieces, perturb, WeightLaw};
use shiftpred::stats;
use shiftpred::worstcase::kl_worstcase_interval;

fn matrix(rows: usize, cols: usize, vals: &[f64]) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |i, j| vals[(i * cols + j) % vals.len()])
}

fn law() -> impl Strategy<Value = WeightLaw> {
    prop_oneof![
        (0.01f64..2.0, 0.0f64..3.0).prop_map(|(a, d)| WeightLaw::UniformInterval { a, b: a + d }),
        (0.01f64..2.0, 0.01f64..10.0, 0.0f64..1.0).prop_map(|(w0, w1, p)| WeightLaw::TwoPoint { w0, w1, p }),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn normalized_piece_weights_have_mean_one(law in law(), m in 1usize..200, seed in any::<u64>()) {
        let base = DMatrix::from_fn(m, 1, |i, _| i as f64);
        let parts = Arc::new(build_pieces(&base, m).unwrap());
        let d = perturb(parts, &law, seed).unwrap();
        prop_assert!((stats::mean(&d.weights) - 1.0).abs() < 1e-12);
        prop_assert!(d.weights.iter().all(|&w| w >= 0.0));
    }

    #[test]
    fn folds_partition_and_balance(n in 0usize..500, seed in any::<u64>()) {
        let s = split_folds(n, seed);
        prop_assert!(s.folds[0].len() >= s.folds[1].len());
        prop_assert!(s.folds[0].len() - s.folds[1].len() <= 1);
        let mut all: Vec<usize> = s.folds.concat();
        all.sort_unstable();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        prop_assert_eq!(split_folds(n, seed).assignment, s.assignment);
    }

    #[test]
    fn median_lies_within_range(v in prop::collection::vec(-1e6f64..1e6, 1..50)) {
        let m = stats::median(&v).unwrap();
        let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(lo <= m && m <= hi);
    }

    #[test]
    fn density_ratio_weights_respect_clip(
        src in prop::collection::vec(-3.0f64..3.0, 40),
        shift in -1.5f64..1.5,
        lo in 0.01f64..0.5,
        span in 1.5f64..30.0,
    ) {
        let xs = matrix(40, 2, &src);
        let xt = xs.map(|v| v + shift);
        let clip = Clip { lo, hi: lo * span };
        if let Ok(dr) = fit_density_ratio(&xs, &xt, clip) {
            for w in dr.weights(&xs) {
                prop_assert!(w >= clip.lo && w <= clip.hi);
            }
        }
    }

    #[test]
    fn entropy_balance_is_affine_invariant(
        vals in prop::collection::vec(-2.0f64..2.0, 60),
        mix in prop::collection::vec(0.2f64..1.0, 30),
        scale in prop::sample::select(vec![-3.0, -0.5, 0.25, 2.0, 10.0]),
        offset in -5.0f64..5.0,
    ) {
        let x = matrix(30, 2, &vals);
        // A strictly positive mixture of the rows lies inside their hull.
        let total: f64 = mix.iter().sum();
        let target: Vec<f64> = (0..2)
            .map(|j| x.column(j).iter().zip(&mix).map(|(v, m)| v * m).sum::<f64>() / total)
            .collect();
        let cfg = BalanceConfig::default();
        let a = entropy_balance(&x, &target, &cfg);
        let xt = x.map(|v| scale * v + offset);
        let tt: Vec<f64> = target.iter().map(|m| scale * m + offset).collect();
        let b = entropy_balance(&xt, &tt, &cfg);
        let (a, b) = (a.unwrap(), b.unwrap());
        prop_assert!(a.converged && b.converged);
        for (wa, wb) in a.w.iter().zip(&b.w) {
            prop_assert!((wa - wb).abs() < 1e-5 * wa.max(1.0), "{} vs {}", wa, wb);
        }
    }

    #[test]
    fn kl_intervals_grow_with_radius_and_hold_the_mean(
        phi in prop::collection::vec(-5.0f64..5.0, 2..60),
        wseed in prop::collection::vec(0.1f64..3.0, 60),
        r1 in 0.0f64..1.0,
        r2 in 0.0f64..1.0,
    ) {
        let w = &wseed[..phi.len()];
        let (small, large) = if r1 <= r2 { (r1, r2) } else { (r2, r1) };
        let a = kl_worstcase_interval(&phi, w, small).unwrap();
        let b = kl_worstcase_interval(&phi, w, large).unwrap();
        let m = stats::weighted_mean(&phi, w);
        let tol = 1e-9 * (1.0 + m.abs());
        prop_assert!(a.lo <= m + tol && m - tol <= a.hi);
        prop_assert!(b.lo <= a.lo + tol && a.hi <= b.hi + tol);
        let max = phi.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let min = phi.iter().copied().fold(f64::INFINITY, f64::min);
        prop_assert!(b.hi <= max + tol && b.lo >= min - tol);
    }

    #[test]
    fn calibrated_bounds_are_ordered_and_intervals_contain_center(
        ratios in prop::collection::vec(-10.0f64..10.0, 1..100),
        alpha in 0.01f64..0.5,
        theta in -5.0f64..5.0,
        tx in 0.0f64..2.0,
        s in 0.0f64..3.0,
    ) {
        let (lo, hi) = calibrate_bounds(&BoundRule::Quantile { alpha }, &ratios).unwrap();
        prop_assert!(lo <= hi);
        let iv = predictive_interval(theta, tx, s, (-1.0, 1.0));
        prop_assert!(iv.contains(theta));
        prop_assert!((iv.width() - 2.0 * tx * s).abs() < 1e-9);
    }
}
