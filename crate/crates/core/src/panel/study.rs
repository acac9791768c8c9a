use std::fmt;

use serde::{Deserialize, Serialize};

use super::Period;

/// Inclusive period range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PeriodRange {
    pub from: Period,
    pub to: Period,
}

impl PeriodRange {
    pub fn new(from: Period, to: Period) -> Self {
        Self { from, to }
    }

    pub fn contains(&self, period: Period) -> bool {
        (self.from..=self.to).contains(&period)
    }

    pub fn periods(&self) -> impl Iterator<Item = Period> {
        self.from..=self.to
    }

    pub fn len(&self) -> usize {
        if self.to < self.from {
            0
        } else {
            (self.to - self.from) as usize + 1
        }
    }

    pub fn is_empty(&self) -> bool {
        self.to < self.from
    }

    /// Intersection with `window`; an empty intersection collapses to the
    /// window edge nearest to `self`.
    pub fn clamp_to(&self, window: PeriodRange) -> PeriodRange {
        let from = self.from.max(window.from);
        let to = self.to.min(window.to);
        if from <= to {
            PeriodRange { from, to }
        } else {
            let edge = if self.from > window.to { window.to } else { window.from };
            PeriodRange { from: edge, to: edge }
        }
    }
}

/// One matching variable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum PredictorDef {
    /// A time-invariant covariate, or a time-varying one averaged over
    /// `from..=to` (the whole pre-period when the range is omitted).
    Covariate {
        name: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        from: Option<Period>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        to: Option<Period>,
    },
    /// A series value in one benchmark period.
    OutcomeLag { name: String, period: Period },
    /// Arithmetic mean of a series over `from..=to`.
    OutcomeMean { name: String, from: Period, to: Period },
}

impl PredictorDef {
    pub fn name(&self) -> &str {
        match self {
            PredictorDef::Covariate { name, .. }
            | PredictorDef::OutcomeLag { name, .. }
            | PredictorDef::OutcomeMean { name, .. } => name,
        }
    }

    /// Periods the predictor reads, if it reads any explicitly.
    pub fn range(&self) -> Option<PeriodRange> {
        match *self {
            PredictorDef::Covariate { from, to, .. } => match (from, to) {
                (Some(f), Some(t)) => Some(PeriodRange::new(f, t)),
                (Some(f), None) => Some(PeriodRange::new(f, f)),
                (None, Some(t)) => Some(PeriodRange::new(t, t)),
                (None, None) => None,
            },
            PredictorDef::OutcomeLag { period, .. } => Some(PeriodRange::new(period, period)),
            PredictorDef::OutcomeMean { from, to, .. } => Some(PeriodRange::new(from, to)),
        }
    }

    pub fn label(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for PredictorDef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PredictorDef::Covariate { name, .. } => match self.range() {
                Some(r) if r.from != r.to => write!(f, "{name}({}-{})", r.from, r.to),
                Some(r) => write!(f, "{name}({})", r.from),
                None => write!(f, "{name}"),
            },
            PredictorDef::OutcomeLag { name, period } => write!(f, "{name}@{period}"),
            PredictorDef::OutcomeMean { name, from, to } => write!(f, "mean {name} {from}-{to}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Sidedness {
    /// Compare `|gap|` of placebos against `|gap|` of the treated unit.
    #[default]
    TwoSidedAbsolute,
    /// Compare signed gaps in the direction of the treated gap.
    OneSidedSigned,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InferenceSettings {
    /// Placebos fitting worse than this multiple of the treated pre-RMSPE
    /// are dropped while `apply_inclusion_filter` is on.
    pub mspe_inclusion_ratio: f64,
    pub apply_inclusion_filter: bool,
    /// Placebos at or beyond this multiple are always discarded.
    pub mspe_discard_ratio: f64,
    pub sidedness: Sidedness,
    pub include_treated_in_denominator: bool,
}

impl Default for InferenceSettings {
    fn default() -> Self {
        Self {
            mspe_inclusion_ratio: 1.0,
            apply_inclusion_filter: true,
            mspe_discard_ratio: 4.0,
            sidedness: Sidedness::TwoSidedAbsolute,
            include_treated_in_denominator: false,
        }
    }
}

impl InferenceSettings {
    pub(crate) fn problems(&self) -> Option<String> {
        let (inc, dis) = (self.mspe_inclusion_ratio, self.mspe_discard_ratio);
        if !(inc.is_finite() && dis.is_finite() && inc > 0.0 && inc <= dis) {
            Some(format!(
                "inference ratios must satisfy 0 < inclusion ({inc}) <= discard ({dis})"
            ))
        } else {
            None
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExcludedUnit {
    pub unit: String,
    pub reason: String,
}

/// A single synthetic control study.
///
/// Pre-period is `t_start..t0`, split into training `t_start..=training_end`
/// and validation `training_end+1..t0`; post-period is `t0..=t_end`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudySpec {
    pub treated: String,
    pub donors: Vec<String>,
    #[serde(default)]
    pub excluded: Vec<ExcludedUnit>,
    pub outcome: String,
    pub t_start: Period,
    pub training_end: Period,
    pub t0: Period,
    pub t_end: Period,
    pub predictors: Vec<PredictorDef>,
    #[serde(default)]
    pub inference: InferenceSettings,
}

impl StudySpec {
    pub fn pre_window(&self) -> PeriodRange {
        PeriodRange::new(self.t_start, self.t0 - 1)
    }

    pub fn training_window(&self) -> PeriodRange {
        PeriodRange::new(self.t_start, self.training_end)
    }

    pub fn validation_window(&self) -> PeriodRange {
        PeriodRange::new(self.training_end + 1, self.t0 - 1)
    }

    pub fn post_window(&self) -> PeriodRange {
        PeriodRange::new(self.t0, self.t_end)
    }

    pub fn full_window(&self) -> PeriodRange {
        PeriodRange::new(self.t_start, self.t_end)
    }

    /// Copy of the study with `unit` as the treated unit and the original
    /// treated unit moved to the exclusion list.
    pub fn reassigned_to(&self, unit: &str) -> StudySpec {
        let mut spec = self.clone();
        spec.donors.retain(|d| d != unit);
        spec.treated = unit.to_owned();
        spec.excluded.push(ExcludedUnit {
            unit: self.treated.clone(),
            reason: "treated".into(),
        });
        spec
    }

    /// Copy of the study with a different donor pool.
    pub fn with_donors(&self, donors: Vec<String>) -> StudySpec {
        StudySpec {
            donors,
            ..self.clone()
        }
    }
}
