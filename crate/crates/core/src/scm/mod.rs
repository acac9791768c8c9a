//! The nested synthetic control estimator.
//!
//! Donor weights W solve the simplex-constrained predictor match for a given
//! predictor weighting V; V is chosen by out-of-sample fit on a
//! training/validation split of the pre-period; the final W is refit on the
//! whole pre-period.

mod nelder_mead;
mod simulate;
mod vsearch;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::panel::{
    build_predictor_matrices, validate_study, PanelDataset, PanelError, Period, StudySpec,
    ValidationReport,
};
use crate::qp::{solve_simplex_wls_from, QpError, QpOptions, SimplexWeights};
use crate::transforms::{standardize_predictors, StandardizationStats, TransformError};

pub use simulate::{simulate_factor_model, FactorModelSpec, SimulationDesign, TreatedPlacement};
pub use vsearch::{optimize_predictor_weights, PredictorWeightSearch};

#[derive(Debug, Error)]
pub enum ScmError {
    #[error("study rejected: {}", first_line(.0))]
    InvalidStudy(ValidationReport),
    #[error(transparent)]
    Panel(#[from] PanelError),
    #[error(transparent)]
    Transform(#[from] TransformError),
    #[error(transparent)]
    Qp(#[from] QpError),
    #[error("donor-weight solver did not converge: kkt residual {kkt_residual:.3e} after {iterations} iterations (objective {objective:.6e})")]
    NotConverged {
        kkt_residual: f64,
        iterations: usize,
        objective: f64,
    },
    #[error("configuration: {0}")]
    Config(String),
    #[error("series domains differ: {0}")]
    DomainMismatch(String),
}

fn first_line(report: &ValidationReport) -> String {
    match report.violations.first() {
        Some(v) if report.len() > 1 => format!("{v} (+{} more)", report.len() - 1),
        Some(v) => v.to_string(),
        None => "no violations".into(),
    }
}

/// Non-negative predictor importances normalized to sum to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct PredictorWeights(Vec<f64>);

impl PredictorWeights {
    pub fn new(v: Vec<f64>) -> Result<Self, ScmError> {
        let total: f64 = v.iter().sum();
        if v.is_empty() || v.iter().any(|x| !x.is_finite() || *x < 0.0) || total <= 0.0 {
            return Err(ScmError::Config(format!(
                "predictor weights must be non-negative with a positive sum, got {v:?}"
            )));
        }
        Ok(Self(v.into_iter().map(|x| x / total).collect()))
    }

    pub fn equal(k: usize) -> Self {
        Self(vec![1.0 / k as f64; k])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl TryFrom<Vec<f64>> for PredictorWeights {
    type Error = ScmError;
    fn try_from(v: Vec<f64>) -> Result<Self, ScmError> {
        Self::new(v)
    }
}

impl From<PredictorWeights> for Vec<f64> {
    fn from(v: PredictorWeights) -> Vec<f64> {
        v.0
    }
}

/// Values indexed by consecutive periods.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Series {
    pub periods: Vec<Period>,
    pub values: Vec<f64>,
}

impl Series {
    pub fn new(periods: Vec<Period>, values: Vec<f64>) -> Self {
        assert_eq!(periods.len(), values.len(), "series periods and values differ in length");
        Self { periods, values }
    }

    pub fn get(&self, period: Period) -> Option<f64> {
        self.periods
            .iter()
            .position(|p| *p == period)
            .map(|i| self.values[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (Period, f64)> + '_ {
        self.periods.iter().copied().zip(self.values.iter().copied())
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Values with `from <= period <= to`.
    pub fn between(&self, from: Period, to: Period) -> impl Iterator<Item = f64> + '_ {
        self.iter()
            .filter(move |(p, _)| (from..=to).contains(p))
            .map(|(_, v)| v)
    }
}

/// Pointwise `observed - synthetic`.
pub fn compute_gap_series(observed: &Series, synthetic: &Series) -> Result<Series, ScmError> {
    if observed.periods != synthetic.periods {
        return Err(ScmError::DomainMismatch(format!(
            "{} observed vs {} synthetic periods",
            observed.len(),
            synthetic.len()
        )));
    }
    let values = observed
        .values
        .iter()
        .zip(&synthetic.values)
        .map(|(o, s)| o - s)
        .collect();
    Ok(Series::new(observed.periods.clone(), values))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictorBalance {
    pub predictor: String,
    pub treated: f64,
    pub synthetic: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QpDiagnostics {
    pub objective: f64,
    pub kkt_residual: f64,
    pub iterations: usize,
    pub non_unique_hint: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticControlFit {
    pub treated: String,
    pub donors: Vec<String>,
    pub t0: Period,
    pub weights: SimplexWeights,
    pub predictor_weights: PredictorWeights,
    pub scaling: StandardizationStats,
    pub observed: Series,
    pub synthetic: Series,
    pub gaps: Series,
    pub pre_rmspe: f64,
    pub att: f64,
    pub end_of_sample_delta: f64,
    pub predictor_balance: Vec<PredictorBalance>,
    pub qp: QpDiagnostics,
    pub v_search: Option<PredictorWeightSearch>,
}

impl SyntheticControlFit {
    pub fn weight_of(&self, unit: &str) -> Option<f64> {
        self.donors
            .iter()
            .position(|d| d == unit)
            .map(|i| self.weights.as_slice()[i])
    }

    /// Donors with weight above `threshold`, in donor order.
    pub fn active_donors(&self, threshold: f64) -> Vec<&str> {
        self.donors
            .iter()
            .zip(self.weights.iter())
            .filter(|(_, w)| **w > threshold)
            .map(|(d, _)| d.as_str())
            .collect()
    }

    pub fn t_end(&self) -> Period {
        *self.gaps.periods.last().expect("fits cover at least one period")
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FitOptions {
    pub qp: QpOptions,
    /// Seeds the multistart points of the predictor-weight search.
    pub seed: u64,
    /// Skip the search and use these predictor weights.
    pub predictor_weights: Option<PredictorWeights>,
    /// Reuse a fixed standardization instead of recomputing it from the pool.
    pub scaling: Option<StandardizationStats>,
    /// Donor weights the QP starts from; donors missing here start at zero.
    pub warm_start: Option<Vec<(String, f64)>>,
}

impl FitOptions {
    pub fn with_seed(seed: u64) -> Self {
        Self {
            seed,
            ..Self::default()
        }
    }

    /// Freezes the predictor metric (weights and scaling) of `fit` and
    /// starts the QP from its donor weights.
    pub fn frozen_from(&self, fit: &SyntheticControlFit) -> Self {
        Self {
            predictor_weights: Some(fit.predictor_weights.clone()),
            scaling: Some(fit.scaling.clone()),
            warm_start: Some(fit.donors.iter().cloned().zip(fit.weights.iter().copied()).collect()),
            ..self.clone()
        }
    }
}

/// Validates the study, then fits it.
pub fn fit_synthetic_control(
    data: &PanelDataset,
    spec: &StudySpec,
    opts: &FitOptions,
) -> Result<SyntheticControlFit, ScmError> {
    let report = validate_study(data, spec);
    if !report.is_clean() {
        return Err(ScmError::InvalidStudy(report));
    }
    fit_prevalidated(data, spec, opts)
}

pub(crate) fn fit_prevalidated(
    data: &PanelDataset,
    spec: &StudySpec,
    opts: &FitOptions,
) -> Result<SyntheticControlFit, ScmError> {
    let k = spec.predictors.len();
    let (v, v_search) = match &opts.predictor_weights {
        Some(v) if v.len() == k => (v.clone(), None),
        Some(v) => {
            return Err(ScmError::Config(format!(
                "{} predictor weights supplied for {k} predictors",
                v.len()
            )))
        }
        None if spec.donors.len() == 1 => (PredictorWeights::equal(k), None),
        None => {
            let search = optimize_predictor_weights(data, spec, opts)?;
            (search.weights.clone(), Some(search))
        }
    };

    let m = build_predictor_matrices(data, spec)?;
    let (x1, x0, scaling) = match &opts.scaling {
        Some(stats) => {
            let (x1, x0) = stats.apply(&m.treated, &m.donors)?;
            (x1, x0, stats.clone())
        }
        None if m.n_donors() == 1 => {
            let stats = StandardizationStats { means: vec![0.0; k], sds: vec![1.0; k] };
            (m.treated.clone(), m.donors.clone(), stats)
        }
        None => standardize_predictors(&m.treated, &m.donors, Some(&m.labels))?,
    };

    let start: Option<Vec<f64>> = opts.warm_start.as_ref().map(|ws| {
        spec.donors
            .iter()
            .map(|d| ws.iter().find(|(u, _)| u == d).map_or(0.0, |(_, w)| *w))
            .collect()
    });
    let start = start.filter(|w| w.iter().any(|x| *x > 0.0));
    let solution = solve_simplex_wls_from(x1.as_slice(), &x0, v.as_slice(), &opts.qp, start.as_deref())?;
    if !solution.converged {
        return Err(ScmError::NotConverged {
            kkt_residual: solution.kkt_residual,
            iterations: solution.iterations,
            objective: solution.objective,
        });
    }
    let weights = solution.weights;
    let w = weights.to_dvector();

    let periods: Vec<Period> = spec.full_window().periods().collect();
    let mut observed = Vec::with_capacity(periods.len());
    let mut synthetic = Vec::with_capacity(periods.len());
    for &period in &periods {
        let missing = |unit: &str| PanelError::Missing {
            unit: unit.into(),
            variable: spec.outcome.clone(),
            period: Some(period),
        };
        observed.push(
            data.value(&spec.treated, &spec.outcome, period)
                .ok_or_else(|| missing(&spec.treated))?,
        );
        let mut s = 0.0;
        for (donor, wj) in spec.donors.iter().zip(w.iter()) {
            s += wj * data.value(donor, &spec.outcome, period).ok_or_else(|| missing(donor))?;
        }
        synthetic.push(s);
    }
    let observed = Series::new(periods.clone(), observed);
    let synthetic = Series::new(periods, synthetic);
    let gaps = compute_gap_series(&observed, &synthetic)?;

    let pre_rmspe = rmspe(gaps.between(spec.t_start, spec.t0 - 1));
    let post: Vec<f64> = gaps.between(spec.t0, spec.t_end).collect();
    let att = post.iter().sum::<f64>() / post.len() as f64;
    let end_of_sample_delta = *gaps.values.last().expect("non-empty window");

    let fitted: DVector<f64> = &m.donors * &w;
    let predictor_balance = m
        .labels
        .iter()
        .enumerate()
        .map(|(i, label)| PredictorBalance {
            predictor: label.clone(),
            treated: m.treated[i],
            synthetic: fitted[i],
        })
        .collect();

    Ok(SyntheticControlFit {
        treated: spec.treated.clone(),
        donors: spec.donors.clone(),
        t0: spec.t0,
        weights,
        predictor_weights: v,
        scaling,
        observed,
        synthetic,
        gaps,
        pre_rmspe,
        att,
        end_of_sample_delta,
        predictor_balance,
        qp: QpDiagnostics {
            objective: solution.objective,
            kkt_residual: solution.kkt_residual,
            iterations: solution.iterations,
            non_unique_hint: solution.non_unique_hint,
        },
        v_search,
    })
}

/// Root mean square of the values.
pub fn rmspe(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), g| (s + g * g, n + 1));
    (sum / n as f64).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gap_series_basics() {
        let obs = Series::new(vec![2010, 2011], vec![10.0, 10.0]);
        let syn = Series::new(vec![2010, 2011], vec![10.0, 12.0]);
        let gap = compute_gap_series(&obs, &syn).unwrap();
        assert_eq!(gap.values, vec![0.0, -2.0]);
        assert_eq!(compute_gap_series(&obs, &obs).unwrap().values, vec![0.0, 0.0]);
        let shifted = Series::new(obs.periods.clone(), obs.values.iter().map(|x| x + 3.5).collect());
        let g2 = compute_gap_series(&shifted, &syn).unwrap();
        for (a, b) in g2.values.iter().zip(&gap.values) {
            assert_eq!(a - b, 3.5);
        }
        let other = Series::new(vec![2010], vec![1.0]);
        assert!(matches!(compute_gap_series(&obs, &other), Err(ScmError::DomainMismatch(_))));
    }

    #[test]
    fn predictor_weights_normalize() {
        let v = PredictorWeights::new(vec![2.0, 6.0]).unwrap();
        assert_eq!(v.as_slice(), &[0.25, 0.75]);
        assert!(PredictorWeights::new(vec![0.0, 0.0]).is_err());
        assert!(PredictorWeights::new(vec![-1.0, 2.0]).is_err());
    }

    #[test]
    fn rmspe_of_known_values() {
        assert_eq!(rmspe([3.0, -4.0].into_iter()), (12.5f64).sqrt());
    }
}
