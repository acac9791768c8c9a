use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::nelder_mead::{self, Settings};
use super::{FitOptions, PredictorWeights, ScmError};
use crate::panel::{build_predictor_matrices_in, PanelDataset, PanelError, StudySpec};
use crate::par;
use crate::qp::solve_simplex_wls;
use crate::transforms::standardize_predictors;

const MULTISTARTS: usize = 4;
const START_SPREAD: f64 = 2.0;
// Relative difference below which two MSPE values count as tied.
const TIE: f64 = 1e-12;

/// Outcome of the predictor-weight search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictorWeightSearch {
    pub weights: PredictorWeights,
    pub validation_mspe: f64,
    pub training_mspe: f64,
    pub evaluations: usize,
}

struct Problem {
    x1: DVector<f64>,
    x0: DMatrix<f64>,
    train_y1: DVector<f64>,
    train_y0: DMatrix<f64>,
    val_y1: DVector<f64>,
    val_y0: DMatrix<f64>,
}

#[derive(Debug, Clone)]
struct Candidate {
    v: Vec<f64>,
    validation: f64,
    training: f64,
}

impl Problem {
    fn evaluate(&self, v: &[f64], opts: &FitOptions) -> Candidate {
        let fit = solve_simplex_wls(self.x1.as_slice(), &self.x0, v, &opts.qp);
        let (validation, training) = match fit {
            Ok(sol) if sol.converged => {
                let w = sol.weights.to_dvector();
                (mspe(&self.val_y1, &self.val_y0, &w), mspe(&self.train_y1, &self.train_y0, &w))
            }
            _ => (f64::INFINITY, f64::INFINITY),
        };
        Candidate {
            v: v.to_vec(),
            validation,
            training,
        }
    }
}

fn mspe(y1: &DVector<f64>, y0: &DMatrix<f64>, w: &DVector<f64>) -> f64 {
    let fitted = y0 * w;
    let n = y1.len();
    (0..n).map(|t| (y1[t] - fitted[t]).powi(2)).sum::<f64>() / n as f64
}

fn tied(a: f64, b: f64) -> bool {
    a == b || (a - b).abs() <= TIE * a.abs().max(b.abs())
}

/// Strict "better than" under the documented tie-breaking order.
fn better(a: &Candidate, b: &Candidate) -> bool {
    if !tied(a.validation, b.validation) {
        return a.validation < b.validation;
    }
    if !tied(a.training, b.training) {
        return a.training < b.training;
    }
    a.v.iter()
        .zip(&b.v)
        .find(|(x, y)| x != y)
        .is_some_and(|(x, y)| x < y)
}

fn softmax(theta: &[f64]) -> Vec<f64> {
    // last coordinate pinned to zero
    let full: Vec<f64> = theta.iter().copied().chain(std::iter::once(0.0)).collect();
    let top = full.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = full.iter().map(|t| (t - top).exp()).collect();
    let total: f64 = e.iter().sum();
    e.into_iter().map(|x| x / total).collect()
}

/// Simplex grid over k = 2 (step 0.01) or k = 3 (step 0.02).
fn grid(k: usize) -> Vec<Vec<f64>> {
    match k {
        2 => (0..=100)
            .map(|i| {
                let a = i as f64 / 100.0;
                vec![a, 1.0 - a]
            })
            .collect(),
        3 => {
            let steps = 50;
            let mut out = Vec::new();
            for i in 0..=steps {
                for j in 0..=steps - i {
                    let a = i as f64 / steps as f64;
                    let b = j as f64 / steps as f64;
                    out.push(vec![a, b, (1.0 - a - b).max(0.0)]);
                }
            }
            out
        }
        _ => Vec::new(),
    }
}

/// Chooses V by validation-window MSPE.
///
/// For each candidate V the donor weights are fit on predictors built from
/// the training window; the candidate is scored by the outcome MSPE over the
/// validation window. Candidates come from Nelder-Mead runs over a softmax
/// parameterization (equal weights plus four seeded starts) and, for k <= 3,
/// an exhaustive simplex grid. Ties on validation MSPE fall to training MSPE,
/// then to the lexicographically smaller V.
pub fn optimize_predictor_weights(
    data: &PanelDataset,
    spec: &StudySpec,
    opts: &FitOptions,
) -> Result<PredictorWeightSearch, ScmError> {
    let k = spec.predictors.len();
    if k == 0 {
        return Err(ScmError::Config("no predictors declared".into()));
    }
    let validation = spec.validation_window();
    if validation.len() < 2 {
        return Err(ScmError::Config(format!(
            "validation window {}-{} needs at least 2 periods",
            validation.from, validation.to
        )));
    }

    let train = build_predictor_matrices_in(data, spec, spec.training_window())?;
    let (x1, x0, _) = standardize_predictors(&train.treated, &train.donors, Some(&train.labels))?;
    let mut val_y1 = DVector::zeros(validation.len());
    let mut val_y0 = DMatrix::zeros(validation.len(), spec.donors.len());
    for (row, period) in validation.periods().enumerate() {
        for (col, unit) in std::iter::once(&spec.treated).chain(&spec.donors).enumerate() {
            let y = data.value(unit, &spec.outcome, period).ok_or_else(|| PanelError::Missing {
                unit: unit.clone(),
                variable: spec.outcome.clone(),
                period: Some(period),
            })?;
            if col == 0 {
                val_y1[row] = y;
            } else {
                val_y0[(row, col - 1)] = y;
            }
        }
    }
    let problem = Problem {
        x1,
        x0,
        train_y1: train.treated_outcome,
        train_y0: train.donors_outcome,
        val_y1,
        val_y0,
    };

    if k == 1 {
        let c = problem.evaluate(&[1.0], opts);
        return Ok(PredictorWeightSearch {
            weights: PredictorWeights::new(c.v)?,
            validation_mspe: c.validation,
            training_mspe: c.training,
            evaluations: 1,
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut starts = vec![vec![0.0; k - 1]];
    for _ in 0..MULTISTARTS {
        starts.push(
            (0..k - 1)
                .map(|_| rng.random_range(-START_SPREAD..START_SPREAD))
                .collect(),
        );
    }
    let settings = Settings {
        step: 1.0,
        max_evaluations: 150 * k + 150,
        f_tol: 1e-10,
        x_tol: 1e-6,
    };
    let runs = par::map(&starts, |start| {
        let m = nelder_mead::minimize(
            |theta| problem.evaluate(&softmax(theta), opts).validation,
            start,
            &settings,
        );
        log::debug!("nelder-mead from {start:?}: {} after {} evaluations", m.value, m.evaluations);
        (problem.evaluate(&softmax(&m.point), opts), m.evaluations + 1)
    });

    let grid_points = grid(k);
    let grid_candidates = par::map(&grid_points, |v| problem.evaluate(v, opts));

    let evaluations = runs.iter().map(|(_, n)| n).sum::<usize>() + grid_candidates.len();
    let best = runs
        .into_iter()
        .map(|(c, _)| c)
        .chain(grid_candidates)
        .reduce(|best, c| if better(&c, &best) { c } else { best })
        .expect("at least one candidate");
    if !best.validation.is_finite() {
        return Err(ScmError::Config(
            "no predictor weighting produced a converged donor-weight fit".into(),
        ));
    }
    Ok(PredictorWeightSearch {
        weights: PredictorWeights::new(best.v)?,
        validation_mspe: best.validation,
        training_mspe: best.training,
        evaluations,
    })
}
