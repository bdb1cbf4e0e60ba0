//! Property tests over randomized instances.

use ndarray::Array2;
use proptest::prelude::*;
use whitband::regfit::{squash, DEFAULT_BOUNDS};
use whitband::{BandMatrix, DifferenceOperator};

fn grid_strategy(max_len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.2f64..8.0, 7..max_len).prop_map(|gaps| {
        let mut t = 0.0;
        gaps.iter()
            .map(|g| {
                t += g;
                t
            })
            .collect()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn band_round_trip_is_exact(
        diag in prop::collection::vec(0.5f64..10.0, 8..24),
        sub in prop::collection::vec(-2.0f64..2.0, 8..24),
        bw in 1usize..4,
    ) {
        let n = diag.len().min(sub.len());
        prop_assume!(n > bw + 1);
        let mut dense = Array2::<f64>::zeros((n, n));
        for i in 0..n {
            dense[(i, i)] = diag[i];
        }
        for j in 1..=bw {
            for i in 0..(n - j) {
                dense[(i + j, i)] = sub[i];
                dense[(i, i + j)] = sub[i];
            }
        }
        let band = BandMatrix::from_dense(dense.view(), bw).unwrap();
        prop_assert_eq!(band.to_dense(), dense);
    }

    #[test]
    fn adjoint_identity_holds(times in grid_strategy(20), order in 1usize..5, seed in 0u64..1000) {
        prop_assume!(times.len() > order + 2);
        let op = DifferenceOperator::build(&times, order).unwrap();
        use rand::{Rng, SeedableRng};
        let mut rng = rand::rngs::StdRng::seed_from_u64(seed);
        let z: Vec<f64> = (0..op.input_len()).map(|_| rng.random::<f64>() - 0.5).collect();
        let v: Vec<f64> = (0..op.output_len()).map(|_| rng.random::<f64>() - 0.5).collect();
        let lhs: f64 = op.apply(&z).unwrap().iter().zip(&v).map(|(a, b)| a * b).sum();
        let rhs: f64 = op.apply_transpose(&v).unwrap().iter().zip(&z).map(|(a, b)| a * b).sum();
        prop_assert!((lhs - rhs).abs() <= 1e-12 * lhs.abs().max(1.0));
    }

    #[test]
    fn polynomials_below_order_are_annihilated(times in grid_strategy(18), order in 1usize..5) {
        prop_assume!(times.len() > order + 2);
        let op = DifferenceOperator::build(&times, order).unwrap();
        let tscale = times.last().unwrap().max(1.0);
        for deg in 0..order {
            let z: Vec<f64> = times.iter().map(|t| (t / tscale).powi(deg as i32)).collect();
            let out = op.apply(&z).unwrap();
            let row_norm: f64 = op.row(0).iter().map(|c| c * c).sum::<f64>().sqrt();
            for v in out {
                prop_assert!(v.abs() <= 1e-9 * row_norm.max(1.0));
            }
        }
    }

    #[test]
    fn squashed_weights_stay_strictly_inside_bounds(raw in -1e6f64..1e6) {
        let v = squash(raw, DEFAULT_BOUNDS);
        prop_assert!(v > DEFAULT_BOUNDS.0);
        prop_assert!(v < DEFAULT_BOUNDS.1);
    }

    #[test]
    fn gram_stays_banded_and_symmetric(times in grid_strategy(16), order in 1usize..4) {
        prop_assume!(times.len() > order + 2);
        let op = DifferenceOperator::build(&times, order).unwrap();
        let w: Vec<f64> = (0..op.output_len()).map(|i| 0.5 + (i % 3) as f64).collect();
        let gram = op.gram_banded(&w).unwrap();
        prop_assert_eq!(gram.bandwidth(), order);
        let dense = gram.to_dense();
        // round trip through band storage at the declared bandwidth is exact
        let back = BandMatrix::from_dense(dense.view(), order).unwrap();
        prop_assert_eq!(back.to_dense(), dense);
    }
}
