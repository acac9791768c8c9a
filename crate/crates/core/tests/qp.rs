mod common;

use common::{assert_simplex, grid_minimum, objective};
use nalgebra::DMatrix;
use proptest::prelude::*;
use synthcontrol::qp::{solve_simplex_wls, solve_simplex_wls_from, QpOptions, LOOSE_TOLERANCE};

fn instance(max_k: usize, max_j: usize) -> impl Strategy<Value = (Vec<f64>, DMatrix<f64>, Vec<f64>)> {
    (1..=max_k, 1..=max_j).prop_flat_map(|(k, j)| {
        (
            prop::collection::vec(-5.0..5.0f64, k),
            prop::collection::vec(-5.0..5.0f64, k * j),
            prop::collection::vec(0.01..1.0f64, k),
        )
            .prop_map(move |(x1, x0, v)| (x1, DMatrix::from_vec(k, j, x0), v))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn no_worse_than_grid((x1, x0, v) in instance(3, 4)) {
        let s = solve_simplex_wls(&x1, &x0, &v, &QpOptions::default()).unwrap();
        prop_assert!(s.converged);
        assert_simplex(s.weights.as_slice());
        let grid = grid_minimum(&x1, &x0, &v, 50);
        prop_assert!(s.objective <= grid + 1e-6, "{} > {}", s.objective, grid);
        let recomputed = objective(&x1, &x0, &v, s.weights.as_slice());
        prop_assert!((recomputed - s.objective).abs() <= 1e-9 * (1.0 + recomputed));
    }

    #[test]
    fn feasible_on_larger_pools((x1, x0, v) in instance(8, 40)) {
        let s = solve_simplex_wls(&x1, &x0, &v, &QpOptions::default()).unwrap();
        prop_assert!(s.converged);
        prop_assert!(s.kkt_residual <= 1e-8);
        assert_simplex(s.weights.as_slice());
        // every vertex is feasible, so none may beat the optimum
        for j in 0..x0.ncols() {
            let mut e = vec![0.0; x0.ncols()];
            e[j] = 1.0;
            prop_assert!(s.objective <= objective(&x1, &x0, &v, &e) + 1e-9);
        }
    }

    #[test]
    fn warm_start_reaches_the_same_optimum((x1, x0, v) in instance(6, 12), start in prop::collection::vec(0.0..1.0f64, 12)) {
        let j = x0.ncols();
        let mut start = start[..j].to_vec();
        start[0] += 0.01;
        let cold = solve_simplex_wls(&x1, &x0, &v, &QpOptions::default()).unwrap();
        let warm = solve_simplex_wls_from(&x1, &x0, &v, &QpOptions::default(), Some(&start)).unwrap();
        prop_assert!(warm.converged);
        assert_simplex(warm.weights.as_slice());
        prop_assert!((warm.objective - cold.objective).abs() <= 1e-9 * (1.0 + cold.objective));
        // an optimal start comes back unchanged
        let again = solve_simplex_wls_from(&x1, &x0, &v, &QpOptions::default(), Some(cold.weights.as_slice())).unwrap();
        for (a, b) in again.weights.iter().zip(cold.weights.iter()) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
        prop_assert_eq!(again.iterations, 0);
    }

    #[test]
    fn donor_order_does_not_matter((x1, x0, v) in instance(4, 10), rot in 0usize..10) {
        let j = x0.ncols();
        let shift = rot % j;
        let rotated = DMatrix::from_fn(x0.nrows(), j, |r, c| x0[(r, (c + shift) % j)]);
        let a = solve_simplex_wls(&x1, &x0, &v, &QpOptions::default()).unwrap();
        let b = solve_simplex_wls(&x1, &rotated, &v, &QpOptions::default()).unwrap();
        prop_assert!((a.objective - b.objective).abs() <= 1e-9 * (1.0 + a.objective));
    }

    #[test]
    fn predictor_weight_scale_scales_objective((x1, x0, v) in instance(4, 10), c in 0.1..10.0f64) {
        let scaled: Vec<f64> = v.iter().map(|x| x * c).collect();
        let a = solve_simplex_wls(&x1, &x0, &v, &QpOptions::default()).unwrap();
        let b = solve_simplex_wls(&x1, &x0, &scaled, &QpOptions::default()).unwrap();
        prop_assert!((a.objective * c - b.objective).abs() <= 1e-8 * (1.0 + b.objective));
    }

    #[test]
    fn loose_mode_stays_feasible_and_close((x1, x0, v) in instance(6, 30)) {
        let tight = solve_simplex_wls(&x1, &x0, &v, &QpOptions::default()).unwrap();
        let loose = solve_simplex_wls(&x1, &x0, &v, &QpOptions { loose: true, ..QpOptions::default() }).unwrap();
        prop_assert!(loose.converged);
        assert_simplex(loose.weights.as_slice());
        prop_assert!(loose.kkt_residual <= LOOSE_TOLERANCE);
        prop_assert!(loose.objective >= tight.objective - 1e-9);
    }
}

#[test]
fn exact_interior_target_is_reached() {
    // x1 is the average of three donors
    let x0 = DMatrix::from_row_slice(2, 3, &[0.0, 3.0, 0.0, 0.0, 0.0, 3.0]);
    let s = solve_simplex_wls(&[1.0, 1.0], &x0, &[1.0, 1.0], &QpOptions::default()).unwrap();
    for w in s.weights.iter() {
        assert!((w - 1.0 / 3.0).abs() < 1e-10);
    }
    assert!(s.objective < 1e-20);
}
