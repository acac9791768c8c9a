#![allow(dead_code)]

use nalgebra::DMatrix;
use synthcontrol::panel::{PanelBuilder, PanelDataset, PredictorDef, StudySpec, InferenceSettings};

/// Weighted squared distance `(x1 - X0 w)' diag(v) (x1 - X0 w)`.
pub fn objective(x1: &[f64], x0: &DMatrix<f64>, v: &[f64], w: &[f64]) -> f64 {
    (0..x1.len())
        .map(|r| {
            let fitted: f64 = (0..x0.ncols()).map(|c| x0[(r, c)] * w[c]).sum();
            v[r] * (x1[r] - fitted).powi(2)
        })
        .sum()
}

/// Calls `f` on every point of the simplex grid with `steps` subdivisions.
pub fn for_each_grid_point(n: usize, steps: usize, f: &mut dyn FnMut(&[f64])) {
    fn rec(w: &mut Vec<f64>, left: usize, n: usize, steps: usize, f: &mut dyn FnMut(&[f64])) {
        if w.len() == n - 1 {
            w.push(left as f64 / steps as f64);
            f(w);
            w.pop();
            return;
        }
        for i in 0..=left {
            w.push(i as f64 / steps as f64);
            rec(w, left - i, n, steps, f);
            w.pop();
        }
    }
    rec(&mut Vec::with_capacity(n), steps, n, steps, f);
}

/// Minimum objective over the simplex grid.
pub fn grid_minimum(x1: &[f64], x0: &DMatrix<f64>, v: &[f64], steps: usize) -> f64 {
    let mut best = f64::INFINITY;
    for_each_grid_point(x0.ncols(), steps, &mut |w| best = best.min(objective(x1, x0, v, w)));
    best
}

/// Leading eigenpair by power iteration with a fixed start.
pub fn power_iteration(m: &DMatrix<f64>, iterations: usize) -> (f64, Vec<f64>) {
    let n = m.nrows();
    let mut v = nalgebra::DVector::from_fn(n, |i, _| 1.0 + 0.1 * i as f64);
    v /= v.norm();
    for _ in 0..iterations {
        let next = m * &v;
        v = &next / next.norm();
    }
    let lambda = v.dot(&(m * &v));
    (lambda, v.iter().copied().collect())
}

/// Panel with outcome `y` over 1..=t_end and constant `z` where the treated
/// unit copies donor `clone_of` exactly.
pub fn clone_panel(n_donors: usize, t_end: i32, clone_of: usize, seed: u64) -> PanelDataset {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut b = PanelBuilder::new();
    let mut rows: Vec<(Vec<f64>, f64)> = Vec::new();
    for _ in 0..n_donors {
        let level: f64 = rng.random_range(5.0..15.0);
        let slope: f64 = rng.random_range(-0.5..0.5);
        let path = (1..=t_end).map(|t| level + slope * t as f64 + rng.random_range(-0.3..0.3)).collect();
        rows.push((path, rng.random_range(0.0..1.0)));
    }
    for (j, (path, z)) in rows.iter().enumerate() {
        let name = donor_name(j);
        for (t, y) in path.iter().enumerate() {
            b.add_series(&name, "y", t as i32 + 1, *y).unwrap();
        }
        b.add_constant(&name, "z", *z).unwrap();
    }
    let (path, z) = &rows[clone_of];
    for (t, y) in path.iter().enumerate() {
        b.add_series("treated", "y", t as i32 + 1, *y).unwrap();
    }
    b.add_constant("treated", "z", *z).unwrap();
    b.build()
}

pub fn donor_name(j: usize) -> String {
    format!("d{:02}", j + 1)
}

/// Study over [`clone_panel`]: pre 1..t0, post t0..=t_end.
pub fn clone_study(n_donors: usize, t0: i32, t_end: i32) -> StudySpec {
    StudySpec {
        treated: "treated".into(),
        donors: (0..n_donors).map(donor_name).collect(),
        excluded: Vec::new(),
        outcome: "y".into(),
        t_start: 1,
        training_end: t0 - 4,
        t0,
        t_end,
        predictors: vec![
            PredictorDef::Covariate { name: "z".into(), from: None, to: None },
            PredictorDef::OutcomeLag { name: "y".into(), period: 2 },
            PredictorDef::OutcomeLag { name: "y".into(), period: t0 - 1 },
            PredictorDef::OutcomeMean { name: "y".into(), from: 1, to: t0 - 1 },
        ],
        inference: InferenceSettings::default(),
    }
}

pub fn assert_simplex(w: &[f64]) {
    let sum: f64 = w.iter().sum();
    assert!((sum - 1.0).abs() <= 1e-9, "weights sum to {sum}");
    let min = w.iter().copied().fold(f64::INFINITY, f64::min);
    assert!(min >= -1e-12, "negative weight {min}");
}
