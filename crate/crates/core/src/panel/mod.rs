//! Balanced unit-by-period panels, long-format CSV ingestion, study
//! definitions and their validation, and predictor-matrix assembly.

mod csv_io;
mod matrices;
mod study;
mod validate;

use std::collections::{BTreeMap, HashSet};
use std::path::PathBuf;

use thiserror::Error;

pub use csv_io::{load_panel_csv, read_panel_csv, write_panel_csv, PanelSchema};
pub use matrices::{build_predictor_matrices, build_predictor_matrices_in, PredictorMatrices};
pub use study::{
    ExcludedUnit, InferenceSettings, PeriodRange, PredictorDef, Sidedness, StudySpec,
};
pub use validate::{validate_study, ValidationReport, Violation};

/// Integer time index (a calendar year in every shipped example).
pub type Period = i32;

#[derive(Debug, Error)]
pub enum PanelError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("schema error: {0}")]
    Schema(String),
    #[error("cannot parse {value:?} as a finite number")]
    Parse { value: String },
    #[error("non-finite value for ({unit}, {period}, {variable})")]
    NonFinite {
        unit: String,
        period: String,
        variable: String,
    },
    #[error("duplicate entry for ({unit}, {period}, {variable})")]
    Duplicate {
        unit: String,
        period: String,
        variable: String,
    },
    #[error("no data rows")]
    Empty,
    #[error("missing {variable} for unit {unit}{}", .period.map(|p| format!(" at {p}")).unwrap_or_default())]
    Missing {
        unit: String,
        variable: String,
        period: Option<Period>,
    },
    #[error("line {line}: {source}")]
    AtLine {
        line: u64,
        #[source]
        source: Box<PanelError>,
    },
}

impl PanelError {
    fn at_line(self, line: u64) -> Self {
        PanelError::AtLine {
            line,
            source: Box::new(self),
        }
    }
}

fn period_label(period: Option<Period>) -> String {
    period.map(|p| p.to_string()).unwrap_or_default()
}

/// Immutable panel of time-varying series and time-invariant covariates.
///
/// Time-varying variables (outcomes as well as time-varying covariates) share
/// one store keyed by variable, unit and period. Units keep their order of
/// first appearance; periods are sorted and unique.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PanelDataset {
    units: Vec<String>,
    periods: Vec<Period>,
    series: BTreeMap<String, BTreeMap<String, BTreeMap<Period, f64>>>,
    constants: BTreeMap<String, BTreeMap<String, f64>>,
}

impl PanelDataset {
    pub fn units(&self) -> &[String] {
        &self.units
    }

    pub fn periods(&self) -> &[Period] {
        &self.periods
    }

    pub fn contains_unit(&self, unit: &str) -> bool {
        self.units.iter().any(|u| u == unit)
    }

    /// Names of the time-varying variables, sorted.
    pub fn series_names(&self) -> impl Iterator<Item = &str> {
        self.series.keys().map(String::as_str)
    }

    /// Names of the time-invariant covariates, sorted.
    pub fn constant_names(&self) -> impl Iterator<Item = &str> {
        self.constants.keys().map(String::as_str)
    }

    pub fn has_series(&self, variable: &str) -> bool {
        self.series.contains_key(variable)
    }

    pub fn has_constant(&self, variable: &str) -> bool {
        self.constants.contains_key(variable)
    }

    pub fn value(&self, unit: &str, variable: &str, period: Period) -> Option<f64> {
        self.series.get(variable)?.get(unit)?.get(&period).copied()
    }

    pub fn constant(&self, unit: &str, variable: &str) -> Option<f64> {
        self.constants.get(variable)?.get(unit).copied()
    }

    /// All observations of one series for one unit, in period order.
    pub fn unit_series(&self, unit: &str, variable: &str) -> Option<&BTreeMap<Period, f64>> {
        self.series.get(variable)?.get(unit)
    }

    /// Adds every cell of `other`; any cell present in both is a duplicate.
    pub fn merge(&mut self, other: &PanelDataset) -> Result<(), PanelError> {
        let mut builder = PanelBuilder::from_dataset(std::mem::take(self));
        let result = (|| {
            for unit in &other.units {
                for (variable, by_unit) in &other.series {
                    for (period, value) in by_unit.get(unit).into_iter().flatten() {
                        builder.add_series(unit, variable, *period, *value)?;
                    }
                }
                for (variable, by_unit) in &other.constants {
                    if let Some(value) = by_unit.get(unit) {
                        builder.add_constant(unit, variable, *value)?;
                    }
                }
            }
            Ok(())
        })();
        *self = builder.build();
        result
    }

    /// Adds a derived time-varying variable (e.g. a composite index).
    pub fn insert_series<I>(&mut self, variable: &str, values: I) -> Result<(), PanelError>
    where
        I: IntoIterator<Item = (String, Period, f64)>,
    {
        if self.series.contains_key(variable) || self.constants.contains_key(variable) {
            return Err(PanelError::Schema(format!(
                "variable {variable:?} already exists in the panel"
            )));
        }
        let mut builder = PanelBuilder::from_dataset(std::mem::take(self));
        let result = values
            .into_iter()
            .try_for_each(|(unit, period, value)| builder.add_series(&unit, variable, period, value));
        *self = builder.build();
        result
    }
}

/// Incremental, checked construction of a [`PanelDataset`].
#[derive(Debug, Default)]
pub struct PanelBuilder {
    data: PanelDataset,
    known_units: HashSet<String>,
}

impl PanelBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    fn from_dataset(data: PanelDataset) -> Self {
        let known_units = data.units.iter().cloned().collect();
        Self { data, known_units }
    }

    fn touch_unit(&mut self, unit: &str) {
        if !self.known_units.contains(unit) {
            self.known_units.insert(unit.to_owned());
            self.data.units.push(unit.to_owned());
        }
    }

    pub fn add_series(
        &mut self,
        unit: &str,
        variable: &str,
        period: Period,
        value: f64,
    ) -> Result<(), PanelError> {
        if !value.is_finite() {
            return Err(PanelError::NonFinite {
                unit: unit.into(),
                period: period.to_string(),
                variable: variable.into(),
            });
        }
        if self.data.constants.contains_key(variable) {
            return Err(PanelError::Schema(format!(
                "variable {variable:?} appears both with and without a period"
            )));
        }
        let cell = self
            .data
            .series
            .entry(variable.to_owned())
            .or_default()
            .entry(unit.to_owned())
            .or_default();
        if cell.contains_key(&period) {
            return Err(PanelError::Duplicate {
                unit: unit.into(),
                period: period.to_string(),
                variable: variable.into(),
            });
        }
        cell.insert(period, value);
        self.touch_unit(unit);
        Ok(())
    }

    pub fn add_constant(&mut self, unit: &str, variable: &str, value: f64) -> Result<(), PanelError> {
        if !value.is_finite() {
            return Err(PanelError::NonFinite {
                unit: unit.into(),
                period: String::new(),
                variable: variable.into(),
            });
        }
        if self.data.series.contains_key(variable) {
            return Err(PanelError::Schema(format!(
                "variable {variable:?} appears both with and without a period"
            )));
        }
        let by_unit = self.data.constants.entry(variable.to_owned()).or_default();
        if by_unit.contains_key(unit) {
            return Err(PanelError::Duplicate {
                unit: unit.into(),
                period: String::new(),
                variable: variable.into(),
            });
        }
        by_unit.insert(unit.to_owned(), value);
        self.touch_unit(unit);
        Ok(())
    }

    pub fn build(mut self) -> PanelDataset {
        let mut periods: Vec<Period> = self
            .data
            .series
            .values()
            .flat_map(|by_unit| by_unit.values())
            .flat_map(|cells| cells.keys().copied())
            .collect();
        periods.sort_unstable();
        periods.dedup();
        self.data.periods = periods;
        self.data
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builder_rejects_duplicates_and_non_finite() {
        let mut b = PanelBuilder::new();
        b.add_series("SYR", "gdp", 2005, 3000.0).unwrap();
        let err = b.add_series("SYR", "gdp", 2005, 3100.0).unwrap_err();
        assert!(err.to_string().contains("(SYR, 2005, gdp)"), "{err}");
        assert!(matches!(
            b.add_series("SYR", "gdp", 2006, f64::NAN),
            Err(PanelError::NonFinite { .. })
        ));
        assert!(matches!(
            b.add_constant("SYR", "gdp", 1.0),
            Err(PanelError::Schema(_))
        ));
    }

    #[test]
    fn periods_sorted_and_units_in_first_appearance_order() {
        let mut b = PanelBuilder::new();
        b.add_series("B", "y", 2003, 1.0).unwrap();
        b.add_series("A", "y", 2001, 2.0).unwrap();
        b.add_series("B", "y", 2001, 3.0).unwrap();
        b.add_constant("C", "lat", 33.0).unwrap();
        let d = b.build();
        assert_eq!(d.periods(), &[2001, 2003]);
        assert_eq!(d.units(), &["B", "A", "C"]);
        assert_eq!(d.value("A", "y", 2001), Some(2.0));
        assert_eq!(d.constant("C", "lat"), Some(33.0));
        assert_eq!(d.value("B", "y", 2003), Some(1.0));
    }

    #[test]
    fn merge_combines_and_detects_duplicates() {
        let mut a = PanelBuilder::new();
        a.add_series("A", "y", 2001, 1.0).unwrap();
        let mut a = a.build();
        let mut b = PanelBuilder::new();
        b.add_series("B", "y", 2002, 2.0).unwrap();
        b.add_constant("A", "lat", 3.0).unwrap();
        let b = b.build();
        a.merge(&b).unwrap();
        assert_eq!(a.units(), &["A", "B"]);
        assert_eq!(a.periods(), &[2001, 2002]);
        assert_eq!(a.constant("A", "lat"), Some(3.0));
        let err = a.merge(&b).unwrap_err();
        assert!(err.to_string().starts_with("duplicate entry"), "{err}");
    }

    #[test]
    fn insert_series_refuses_existing_name() {
        let mut b = PanelBuilder::new();
        b.add_series("A", "y", 2001, 1.0).unwrap();
        let mut d = b.build();
        assert!(d.insert_series("y", vec![("A".to_string(), 2001, 0.0)]).is_err());
        d.insert_series("pc1", vec![("A".to_string(), 2002, 0.5)]).unwrap();
        assert_eq!(d.periods(), &[2001, 2002]);
        assert_eq!(d.value("A", "pc1", 2002), Some(0.5));
    }
}
