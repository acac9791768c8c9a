use std::collections::{BTreeSet, HashSet};
use std::fmt;

use super::{PanelDataset, Period, PeriodRange, PredictorDef, StudySpec};

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub enum Violation {
    WindowOrder(String),
    TooFewDonors(usize),
    UnknownUnit { unit: String },
    TreatedInDonorPool(String),
    DuplicateDonor(String),
    ExcludedInDonorPool { unit: String, reason: String },
    UnknownVariable { predictor: String, variable: String },
    PredictorOutsideWindow { predictor: String },
    Unbalanced { unit: String, variable: String, period: Period },
    MissingCovariate { unit: String, variable: String },
    InferenceSettings(String),
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::WindowOrder(msg) => write!(f, "window ordering: {msg}"),
            Violation::TooFewDonors(n) => write!(f, "donor pool has {n} unit(s); at least 2 required"),
            Violation::UnknownUnit { unit } => write!(f, "unknown unit: {unit}"),
            Violation::TreatedInDonorPool(u) => write!(f, "treated unit in donor pool: {u}"),
            Violation::DuplicateDonor(u) => write!(f, "duplicate donor: {u}"),
            Violation::ExcludedInDonorPool { unit, reason } => {
                write!(f, "excluded unit in donor pool: {unit} ({reason})")
            }
            Violation::UnknownVariable { predictor, variable } => {
                write!(f, "missing variable: {variable} (referenced by {predictor})")
            }
            Violation::PredictorOutsideWindow { predictor } => {
                write!(f, "predictor outside pre-treatment window: {predictor}")
            }
            Violation::Unbalanced { unit, variable, period } => {
                write!(f, "unbalanced panel: {unit}, {period} ({variable})")
            }
            Violation::MissingCovariate { unit, variable } => {
                write!(f, "missing covariate: {unit}, {variable}")
            }
            Violation::InferenceSettings(msg) => write!(f, "inference settings: {msg}"),
        }
    }
}

/// Every problem found in a study; an empty report means the study can be fit.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn len(&self) -> usize {
        self.violations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for v in &self.violations {
            writeln!(f, "{v}")?;
        }
        write!(f, "{} violations", self.violations.len())
    }
}

pub fn validate_study(data: &PanelDataset, spec: &StudySpec) -> ValidationReport {
    let mut found = BTreeSet::new();
    let mut v = Vec::new();

    let windows_ok = spec.t_start < spec.training_end
        && spec.training_end < spec.t0
        && spec.t0 <= spec.t_end;
    if !windows_ok {
        v.push(Violation::WindowOrder(format!(
            "need t_start ({}) < training_end ({}) < t0 ({}) <= t_end ({})",
            spec.t_start, spec.training_end, spec.t0, spec.t_end
        )));
    }
    if spec.donors.len() < 2 {
        v.push(Violation::TooFewDonors(spec.donors.len()));
    }

    let mut units = Vec::with_capacity(spec.donors.len() + 1);
    if data.contains_unit(&spec.treated) {
        units.push(spec.treated.as_str());
    } else {
        v.push(Violation::UnknownUnit { unit: spec.treated.clone() });
    }
    let mut seen = HashSet::new();
    for donor in &spec.donors {
        if !seen.insert(donor.as_str()) {
            v.push(Violation::DuplicateDonor(donor.clone()));
            continue;
        }
        if *donor == spec.treated {
            v.push(Violation::TreatedInDonorPool(donor.clone()));
        }
        if let Some(ex) = spec.excluded.iter().find(|e| e.unit == *donor) {
            v.push(Violation::ExcludedInDonorPool {
                unit: donor.clone(),
                reason: ex.reason.clone(),
            });
        }
        if data.contains_unit(donor) {
            if *donor != spec.treated {
                units.push(donor.as_str());
            }
        } else {
            v.push(Violation::UnknownUnit { unit: donor.clone() });
        }
    }

    if !data.has_series(&spec.outcome) {
        v.push(Violation::UnknownVariable {
            predictor: "study outcome".into(),
            variable: spec.outcome.clone(),
        });
    } else if windows_ok {
        for unit in &units {
            for period in spec.full_window().periods() {
                if data.value(unit, &spec.outcome, period).is_none() {
                    found.insert(Violation::Unbalanced {
                        unit: (*unit).into(),
                        variable: spec.outcome.clone(),
                        period,
                    });
                }
            }
        }
    }

    let pre = spec.pre_window();
    for predictor in &spec.predictors {
        let label = predictor.label();
        let range = predictor.range();
        if let Some(r) = range {
            if r.is_empty() || !windows_ok || r.from < pre.from || r.to > pre.to {
                v.push(Violation::PredictorOutsideWindow { predictor: label.clone() });
                continue;
            }
        }
        let name = predictor.name();
        match predictor {
            PredictorDef::OutcomeLag { .. } | PredictorDef::OutcomeMean { .. } => {
                if !data.has_series(name) {
                    v.push(Violation::UnknownVariable { predictor: label, variable: name.into() });
                    continue;
                }
                let r = range.expect("outcome predictors carry a range");
                for unit in &units {
                    for period in r.periods() {
                        if data.value(unit, name, period).is_none() {
                            found.insert(Violation::Unbalanced {
                                unit: (*unit).into(),
                                variable: name.into(),
                                period,
                            });
                        }
                    }
                }
            }
            PredictorDef::Covariate { .. } => {
                if data.has_constant(name) {
                    for unit in &units {
                        if data.constant(unit, name).is_none() {
                            found.insert(Violation::MissingCovariate {
                                unit: (*unit).into(),
                                variable: name.into(),
                            });
                        }
                    }
                } else if data.has_series(name) {
                    let r = range.unwrap_or(pre);
                    for unit in &units {
                        if !has_any_in(data, unit, name, r) {
                            found.insert(Violation::MissingCovariate {
                                unit: (*unit).into(),
                                variable: name.into(),
                            });
                        }
                    }
                } else {
                    v.push(Violation::UnknownVariable { predictor: label, variable: name.into() });
                }
            }
        }
    }
    if spec.predictors.is_empty() {
        v.push(Violation::UnknownVariable {
            predictor: "predictor list".into(),
            variable: "(none declared)".into(),
        });
    }

    if let Some(msg) = spec.inference.problems() {
        v.push(Violation::InferenceSettings(msg));
    }
    v.extend(found);
    ValidationReport { violations: v }
}

fn has_any_in(data: &PanelDataset, unit: &str, variable: &str, range: PeriodRange) -> bool {
    data.unit_series(unit, variable)
        .is_some_and(|cells| cells.range(range.from..=range.to).next().is_some())
}
