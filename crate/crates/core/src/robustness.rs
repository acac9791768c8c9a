//! Leave-one-out, in-time placebo and restricted-pool refits.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::panel::{PanelDataset, Period, PeriodRange, PredictorDef, StudySpec};
use crate::par;
use crate::scm::{fit_prevalidated, fit_synthetic_control, FitOptions, ScmError, SyntheticControlFit};

/// Donors below this baseline weight are not dropped in leave-one-out.
pub const ACTIVE_WEIGHT: f64 = 1e-6;
/// Pre-placebo periods required by an in-time placebo.
pub const MIN_PLACEBO_PRE: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RefitMode {
    /// Search the predictor weights again for every variant.
    #[default]
    Reoptimize,
    /// Keep the baseline's predictor weights and scaling.
    FrozenV,
}

impl RefitMode {
    fn options(self, opts: &FitOptions, baseline: &SyntheticControlFit) -> FitOptions {
        match self {
            RefitMode::Reoptimize => FitOptions {
                predictor_weights: None,
                scaling: None,
                warm_start: None,
                ..opts.clone()
            },
            RefitMode::FrozenV => opts.frozen_from(baseline),
        }
    }
}

/// A refit variant compared against the baseline fit.
#[derive(Debug, Clone)]
pub struct RobustnessReport {
    pub label: String,
    pub baseline: Arc<SyntheticControlFit>,
    pub fit: Option<SyntheticControlFit>,
    /// Set when the variant violates a precondition; the fit may still exist
    /// (a one-donor pool is fit but flagged).
    pub infeasible: Option<String>,
}

impl RobustnessReport {
    fn fitted(label: String, baseline: &Arc<SyntheticControlFit>, fit: SyntheticControlFit) -> Self {
        Self {
            label,
            baseline: Arc::clone(baseline),
            fit: Some(fit),
            infeasible: None,
        }
    }

    pub fn infeasible(label: String, baseline: &Arc<SyntheticControlFit>, reason: String) -> Self {
        Self {
            label,
            baseline: Arc::clone(baseline),
            fit: None,
            infeasible: Some(reason),
        }
    }

    pub fn is_feasible(&self) -> bool {
        self.infeasible.is_none()
    }

    pub fn att_delta(&self) -> Option<f64> {
        self.fit.as_ref().map(|f| f.att - self.baseline.att)
    }

    pub fn end_of_sample_delta_diff(&self) -> Option<f64> {
        self.fit
            .as_ref()
            .map(|f| f.end_of_sample_delta - self.baseline.end_of_sample_delta)
    }

    pub fn pre_rmspe_delta(&self) -> Option<f64> {
        self.fit.as_ref().map(|f| f.pre_rmspe - self.baseline.pre_rmspe)
    }

    /// L1 distance between the donor weight vectors, a missing donor counting
    /// as weight zero.
    pub fn weight_l1(&self) -> Option<f64> {
        let fit = self.fit.as_ref()?;
        let mut all: BTreeMap<&str, (f64, f64)> = BTreeMap::new();
        for (u, w) in self.baseline.donors.iter().zip(self.baseline.weights.iter()) {
            all.entry(u).or_default().0 = *w;
        }
        for (u, w) in fit.donors.iter().zip(fit.weights.iter()) {
            all.entry(u).or_default().1 = *w;
        }
        Some(all.values().map(|(a, b)| (a - b).abs()).sum())
    }
}

/// Orders by |att delta| descending; variants without a fit go last, ties by
/// label.
pub fn rank_by_att_delta(reports: &mut [RobustnessReport]) {
    reports.sort_by(|a, b| {
        let key = |r: &RobustnessReport| r.att_delta().map(f64::abs);
        match (key(a), key(b)) {
            (Some(x), Some(y)) => y.total_cmp(&x),
            (Some(_), None) => Ordering::Less,
            (None, Some(_)) => Ordering::Greater,
            (None, None) => Ordering::Equal,
        }
        .then_with(|| a.label.cmp(&b.label))
    });
}

/// Refits once per donor with baseline weight above [`ACTIVE_WEIGHT`], with
/// that donor removed from the pool.
///
/// A drop leaving a single donor is fit (its weight is trivially one) but
/// marked infeasible.
pub fn leave_one_out(
    data: &PanelDataset,
    spec: &StudySpec,
    baseline: &Arc<SyntheticControlFit>,
    mode: RefitMode,
    opts: &FitOptions,
) -> Vec<RobustnessReport> {
    let opts = mode.options(opts, baseline);
    let dropped: Vec<&String> = baseline
        .donors
        .iter()
        .zip(baseline.weights.iter())
        .filter(|(_, w)| **w > ACTIVE_WEIGHT)
        .map(|(u, _)| u)
        .collect();
    let mut reports = par::map(&dropped, |unit| {
        let label = format!("leave-one-out:{unit}");
        let donors: Vec<String> = spec.donors.iter().filter(|d| d != unit).cloned().collect();
        let variant = spec.with_donors(donors);
        if variant.donors.len() == 1 {
            return match fit_prevalidated(data, &variant, &opts) {
                Ok(fit) => RobustnessReport {
                    infeasible: Some("single donor left after drop".into()),
                    ..RobustnessReport::fitted(label, baseline, fit)
                },
                Err(e) => RobustnessReport::infeasible(label, baseline, e.to_string()),
            };
        }
        match fit_synthetic_control(data, &variant, &opts) {
            Ok(fit) => RobustnessReport::fitted(label, baseline, fit),
            Err(e) => RobustnessReport::infeasible(label, baseline, e.to_string()),
        }
    });
    rank_by_att_delta(&mut reports);
    reports
}

/// The study moved to a fake treatment date `placebo_t0`.
///
/// The sample ends at the true T0 - 1. Predictor references after the new
/// pre-period are pulled back into it, and the training window is shortened
/// if needed so the validation window keeps at least two periods.
pub fn in_time_spec(spec: &StudySpec, placebo_t0: Period) -> Result<StudySpec, ScmError> {
    if placebo_t0 <= spec.t_start || placebo_t0 >= spec.t0 {
        return Err(ScmError::Config(format!(
            "placebo treatment period {placebo_t0} must lie strictly between {} and {}",
            spec.t_start, spec.t0
        )));
    }
    let pre = (placebo_t0 - spec.t_start) as usize;
    if pre < MIN_PLACEBO_PRE {
        return Err(ScmError::Config(format!(
            "placebo treatment period {placebo_t0} leaves {pre} pre-placebo periods, need {MIN_PLACEBO_PRE}"
        )));
    }
    let window = PeriodRange::new(spec.t_start, placebo_t0 - 1);
    let mut predictors: Vec<PredictorDef> = Vec::new();
    for p in &spec.predictors {
        let clamped = match p {
            PredictorDef::Covariate { name, from, to } => {
                let r = PeriodRange::new(from.unwrap_or(window.from), to.unwrap_or(window.to)).clamp_to(window);
                PredictorDef::Covariate {
                    name: name.clone(),
                    from: from.map(|_| r.from),
                    to: to.map(|_| r.to),
                }
            }
            PredictorDef::OutcomeLag { name, period } => PredictorDef::OutcomeLag {
                name: name.clone(),
                period: (*period).clamp(window.from, window.to),
            },
            PredictorDef::OutcomeMean { name, from, to } => {
                let r = PeriodRange::new(*from, *to).clamp_to(window);
                PredictorDef::OutcomeMean { name: name.clone(), from: r.from, to: r.to }
            }
        };
        if !predictors.contains(&clamped) {
            predictors.push(clamped);
        }
    }
    Ok(StudySpec {
        t0: placebo_t0,
        t_end: spec.t0 - 1,
        training_end: spec.training_end.min(placebo_t0 - 3),
        predictors,
        ..spec.clone()
    })
}

/// Refits the full pipeline with treatment moved back to `placebo_t0`.
pub fn in_time_placebo(
    data: &PanelDataset,
    spec: &StudySpec,
    baseline: &Arc<SyntheticControlFit>,
    placebo_t0: Period,
    opts: &FitOptions,
) -> Result<RobustnessReport, ScmError> {
    let variant = in_time_spec(spec, placebo_t0)?;
    let opts = RefitMode::Reoptimize.options(opts, baseline);
    let fit = fit_synthetic_control(data, &variant, &opts)?;
    Ok(RobustnessReport::fitted(format!("in-time:{placebo_t0}"), baseline, fit))
}

/// Refits on the donors in `keep`, in the original pool order.
pub fn restricted_pool(
    data: &PanelDataset,
    spec: &StudySpec,
    baseline: &Arc<SyntheticControlFit>,
    keep: &[String],
    mode: RefitMode,
    opts: &FitOptions,
    label: &str,
) -> Result<RobustnessReport, ScmError> {
    let keep: BTreeSet<&str> = keep.iter().map(String::as_str).collect();
    let unknown: Vec<&str> = keep
        .iter()
        .copied()
        .filter(|u| !spec.donors.iter().any(|d| d == u))
        .collect();
    if !unknown.is_empty() {
        return Err(ScmError::Config(format!(
            "restricted pool names units outside the donor pool: {}",
            unknown.join(", ")
        )));
    }
    if keep.len() < 2 {
        return Err(ScmError::Config(format!(
            "restricted pool needs at least 2 donors, got {}",
            keep.len()
        )));
    }
    let donors = spec.donors.iter().filter(|d| keep.contains(d.as_str())).cloned().collect();
    let variant = spec.with_donors(donors);
    let fit = fit_synthetic_control(data, &variant, &mode.options(opts, baseline))?;
    Ok(RobustnessReport::fitted(format!("pool:{label}"), baseline, fit))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scm::SimulationDesign;

    fn study() -> (PanelDataset, StudySpec) {
        let design = SimulationDesign { n_donors: 6, n_pre: 10, n_post: 3, noise_sd: 0.2, seed: 5, ..Default::default() };
        let data = crate::scm::simulate_factor_model(&design.build().unwrap()).unwrap();
        (data, design.default_study())
    }

    #[test]
    fn in_time_spec_bounds() {
        let (_, spec) = study();
        assert!(in_time_spec(&spec, spec.t0).is_err());
        assert!(in_time_spec(&spec, spec.t_start + 3).is_err());
        let s = in_time_spec(&spec, spec.t_start + 4).unwrap();
        assert_eq!(s.t_end, spec.t0 - 1);
        assert_eq!(s.validation_window().len(), 2);
        assert!(s.predictors.iter().all(|p| p.range().is_none_or(|r| r.to < s.t0)));
    }

    #[test]
    fn full_pool_restriction_is_identity() {
        let (data, spec) = study();
        let opts = FitOptions::default();
        let base = Arc::new(fit_synthetic_control(&data, &spec, &opts).unwrap());
        let r = restricted_pool(&data, &spec, &base, &spec.donors, RefitMode::Reoptimize, &opts, "all").unwrap();
        assert_eq!(r.att_delta(), Some(0.0));
        assert_eq!(r.weight_l1(), Some(0.0));
        let bad = restricted_pool(&data, &spec, &base, &["zz".into(), "d01".into()], RefitMode::FrozenV, &opts, "x");
        assert!(bad.is_err());
    }

    #[test]
    fn leave_one_out_covers_active_donors() {
        let (data, spec) = study();
        let opts = FitOptions::default();
        let base = Arc::new(fit_synthetic_control(&data, &spec, &opts).unwrap());
        let reports = leave_one_out(&data, &spec, &base, RefitMode::FrozenV, &opts);
        assert_eq!(reports.len(), base.active_donors(ACTIVE_WEIGHT).len());
        let deltas: Vec<f64> = reports.iter().filter_map(|r| r.att_delta()).map(f64::abs).collect();
        assert!(deltas.windows(2).all(|w| w[0] >= w[1]));
    }
}
