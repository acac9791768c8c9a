//! In-space placebo inference.
//!
//! Every donor is in turn treated as if it had received the intervention; the
//! treated unit's gap is then ranked against the placebo gaps.

use std::sync::Arc;

use serde::Serialize;
use thiserror::Error;

use crate::panel::{InferenceSettings, PanelDataset, Period, Sidedness, StudySpec};
use crate::par;
use crate::scm::{fit_synthetic_control, FitOptions, ScmError, Series, SyntheticControlFit};

pub const FIT_FAILURE: &str = "fit-failure";

#[derive(Debug, Error)]
pub enum InferenceError {
    #[error("empty reference distribution: all {total} placebos excluded ({breakdown})")]
    EmptyReference { total: usize, breakdown: String },
    #[error("invalid inference settings: {0}")]
    Settings(String),
    #[error("placebo gaps do not cover period {0}")]
    MissingPeriod(Period),
    #[error(transparent)]
    Scm(#[from] ScmError),
}

/// One donor refit as if it were treated.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlaceboFit {
    pub unit: String,
    /// Empty when the fit failed.
    pub gaps: Series,
    /// Infinite when the fit failed.
    pub pre_rmspe: f64,
    /// NaN when the fit failed.
    pub att: f64,
    pub excluded: bool,
    pub exclusion_reason: Option<String>,
    /// Error message of a failed fit.
    pub failure: Option<String>,
}

impl PlaceboFit {
    fn failed(unit: &str, err: &ScmError) -> Self {
        Self {
            unit: unit.into(),
            gaps: Series::new(Vec::new(), Vec::new()),
            pre_rmspe: f64::INFINITY,
            att: f64::NAN,
            excluded: true,
            exclusion_reason: Some(FIT_FAILURE.into()),
            failure: Some(err.to_string()),
        }
    }

    pub fn is_failure(&self) -> bool {
        self.failure.is_some()
    }
}

#[derive(Debug, Clone)]
pub struct PlaceboEnsemble {
    pub treated: Arc<SyntheticControlFit>,
    /// Sorted by unit id.
    pub placebos: Vec<PlaceboFit>,
    pub settings: InferenceSettings,
}

impl PlaceboEnsemble {
    pub fn included(&self) -> impl Iterator<Item = &PlaceboFit> {
        self.placebos.iter().filter(|p| !p.excluded)
    }

    pub fn n_included(&self) -> usize {
        self.included().count()
    }
}

/// Fits the treated unit, then every in-space placebo.
pub fn run_in_space_placebos(
    data: &PanelDataset,
    spec: &StudySpec,
    opts: &FitOptions,
) -> Result<PlaceboEnsemble, ScmError> {
    let treated = Arc::new(fit_synthetic_control(data, spec, opts)?);
    Ok(placebos_for(data, spec, treated, opts))
}

/// Runs the placebos against an existing treated fit.
///
/// Each donor becomes the treated unit with the remaining donors as its pool;
/// the actually treated unit is never a placebo donor. Predictor weights are
/// searched afresh for every placebo. Failed fits are kept as excluded
/// entries.
pub fn placebos_for(
    data: &PanelDataset,
    spec: &StudySpec,
    treated: Arc<SyntheticControlFit>,
    opts: &FitOptions,
) -> PlaceboEnsemble {
    let opts = FitOptions {
        predictor_weights: None,
        scaling: None,
        warm_start: None,
        ..opts.clone()
    };
    let mut placebos = par::map(&spec.donors, |unit| {
        let placebo_spec = spec.reassigned_to(unit);
        match fit_synthetic_control(data, &placebo_spec, &opts) {
            Ok(fit) => PlaceboFit {
                unit: unit.clone(),
                pre_rmspe: fit.pre_rmspe,
                att: fit.att,
                gaps: fit.gaps,
                excluded: false,
                exclusion_reason: None,
                failure: None,
            },
            Err(err) => {
                log::warn!("placebo {unit} failed: {err}");
                PlaceboFit::failed(unit, &err)
            }
        }
    });
    placebos.sort_by(|a, b| a.unit.cmp(&b.unit));
    let mut ensemble = PlaceboEnsemble {
        treated,
        placebos,
        settings: spec.inference.clone(),
    };
    apply_mspe_filters(&mut ensemble, &spec.inference);
    ensemble
}

fn ratio_label(ratio: f64) -> String {
    format!("mspe>{ratio}x")
}

/// Recomputes exclusions under `settings`.
///
/// A placebo whose pre-period RMSPE exceeds the discard multiple of the
/// treated pre-RMSPE is labelled with that multiple (`mspe>4x`); otherwise,
/// with the inclusion filter on, one exceeding the inclusion multiple gets
/// `mspe>1x`. Failed fits stay excluded.
pub fn apply_mspe_filters(ensemble: &mut PlaceboEnsemble, settings: &InferenceSettings) {
    let reference = ensemble.treated.pre_rmspe;
    for p in &mut ensemble.placebos {
        let reason = if p.is_failure() {
            Some(FIT_FAILURE.to_string())
        } else if p.pre_rmspe > settings.mspe_discard_ratio * reference {
            Some(ratio_label(settings.mspe_discard_ratio))
        } else if settings.apply_inclusion_filter
            && p.pre_rmspe > settings.mspe_inclusion_ratio * reference
        {
            Some(ratio_label(settings.mspe_inclusion_ratio))
        } else {
            None
        };
        p.excluded = reason.is_some();
        p.exclusion_reason = reason;
    }
    ensemble.settings = settings.clone();
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PValue {
    pub period: Period,
    pub p: f64,
    pub numerator: usize,
    pub denominator: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PValueSeries {
    /// One entry per post-period, in order.
    pub values: Vec<PValue>,
}

impl PValueSeries {
    pub fn end_of_sample(&self) -> PValue {
        *self.values.last().expect("post-period is non-empty")
    }

    pub fn get(&self, period: Period) -> Option<PValue> {
        self.values.iter().find(|v| v.period == period).copied()
    }
}

/// True when the placebo gap counts as at least as extreme as the treated gap.
pub fn as_extreme(placebo: f64, treated: f64, sidedness: Sidedness) -> bool {
    match sidedness {
        Sidedness::TwoSidedAbsolute => placebo.abs() >= treated.abs(),
        Sidedness::OneSidedSigned if treated < 0.0 => placebo <= treated,
        Sidedness::OneSidedSigned => placebo >= treated,
    }
}

/// Empirical p-value for each post-period from the non-excluded placebos.
///
/// With `include_treated_in_denominator` the treated unit counts as one more
/// member of the reference set, in both numerator and denominator.
pub fn empirical_p_values(
    ensemble: &PlaceboEnsemble,
    settings: &InferenceSettings,
) -> Result<PValueSeries, InferenceError> {
    let included: Vec<&PlaceboFit> = ensemble.included().collect();
    if included.is_empty() {
        return Err(InferenceError::EmptyReference {
            total: ensemble.placebos.len(),
            breakdown: exclusion_breakdown(ensemble),
        });
    }
    let treated = &ensemble.treated;
    let extra = usize::from(settings.include_treated_in_denominator);
    let mut values = Vec::new();
    for (period, gap) in treated.gaps.iter().filter(|(t, _)| *t >= treated.t0) {
        let mut count = 0;
        for p in &included {
            let g = p.gaps.get(period).ok_or(InferenceError::MissingPeriod(period))?;
            count += usize::from(as_extreme(g, gap, settings.sidedness));
        }
        let numerator = count + extra;
        let denominator = included.len() + extra;
        values.push(PValue {
            period,
            p: numerator as f64 / denominator as f64,
            numerator,
            denominator,
        });
    }
    if values.is_empty() {
        return Err(InferenceError::Settings("treated fit has no post-period".into()));
    }
    Ok(PValueSeries { values })
}

/// Counts of exclusion reasons, e.g. `mspe>1x: 3, mspe>4x: 2`.
pub fn exclusion_breakdown(ensemble: &PlaceboEnsemble) -> String {
    let mut counts = std::collections::BTreeMap::<&str, usize>::new();
    for p in &ensemble.placebos {
        if let Some(r) = &p.exclusion_reason {
            *counts.entry(r).or_default() += 1;
        }
    }
    if counts.is_empty() {
        return "no exclusions".into();
    }
    counts
        .iter()
        .map(|(r, n)| format!("{r}: {n}"))
        .collect::<Vec<_>>()
        .join(", ")
}
