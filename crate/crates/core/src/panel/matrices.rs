use nalgebra::{DMatrix, DVector};

use super::{PanelDataset, PanelError, Period, PeriodRange, PredictorDef, StudySpec};

/// Matching-variable and outcome matrices for one study window.
///
/// Rows of `donors` follow the predictor order, columns follow the donor
/// order of the study. Outcome matrices hold raw values, one row per period.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictorMatrices {
    pub labels: Vec<String>,
    pub treated: DVector<f64>,
    pub donors: DMatrix<f64>,
    pub periods: Vec<Period>,
    pub treated_outcome: DVector<f64>,
    pub donors_outcome: DMatrix<f64>,
}

impl PredictorMatrices {
    pub fn n_predictors(&self) -> usize {
        self.treated.len()
    }

    pub fn n_donors(&self) -> usize {
        self.donors.ncols()
    }
}

/// Matrices over the whole pre-treatment window `t_start..t0`.
pub fn build_predictor_matrices(
    data: &PanelDataset,
    spec: &StudySpec,
) -> Result<PredictorMatrices, PanelError> {
    build_predictor_matrices_in(data, spec, spec.pre_window())
}

/// Matrices over an arbitrary window.
///
/// Every time reference of a predictor is clamped into `window`, so nothing
/// outside it is read: a lag past the window end reads the last window
/// period and averaging ranges are intersected with the window.
pub fn build_predictor_matrices_in(
    data: &PanelDataset,
    spec: &StudySpec,
    window: PeriodRange,
) -> Result<PredictorMatrices, PanelError> {
    let k = spec.predictors.len();
    let j = spec.donors.len();
    let periods: Vec<Period> = window.periods().collect();

    let mut treated = DVector::zeros(k);
    let mut donors = DMatrix::zeros(k, j);
    for (row, predictor) in spec.predictors.iter().enumerate() {
        treated[row] = predictor_value(data, &spec.treated, predictor, window)?;
        for (col, donor) in spec.donors.iter().enumerate() {
            donors[(row, col)] = predictor_value(data, donor, predictor, window)?;
        }
    }

    let outcome = |unit: &str, period: Period| {
        data.value(unit, &spec.outcome, period).ok_or_else(|| PanelError::Missing {
            unit: unit.into(),
            variable: spec.outcome.clone(),
            period: Some(period),
        })
    };
    let mut treated_outcome = DVector::zeros(periods.len());
    let mut donors_outcome = DMatrix::zeros(periods.len(), j);
    for (row, &period) in periods.iter().enumerate() {
        treated_outcome[row] = outcome(&spec.treated, period)?;
        for (col, donor) in spec.donors.iter().enumerate() {
            donors_outcome[(row, col)] = outcome(donor, period)?;
        }
    }

    Ok(PredictorMatrices {
        labels: spec.predictors.iter().map(PredictorDef::label).collect(),
        treated,
        donors,
        periods,
        treated_outcome,
        donors_outcome,
    })
}

fn predictor_value(
    data: &PanelDataset,
    unit: &str,
    predictor: &PredictorDef,
    window: PeriodRange,
) -> Result<f64, PanelError> {
    let name = predictor.name();
    let missing = |period| PanelError::Missing {
        unit: unit.into(),
        variable: name.into(),
        period,
    };
    match predictor {
        PredictorDef::OutcomeLag { .. } | PredictorDef::OutcomeMean { .. } => {
            let range = predictor
                .range()
                .expect("outcome predictors carry a range")
                .clamp_to(window);
            let mut sum = 0.0;
            for period in range.periods() {
                sum += data.value(unit, name, period).ok_or_else(|| missing(Some(period)))?;
            }
            Ok(sum / range.len() as f64)
        }
        PredictorDef::Covariate { .. } => {
            if data.has_constant(name) {
                return data.constant(unit, name).ok_or_else(|| missing(None));
            }
            let range = predictor.range().unwrap_or(window).clamp_to(window);
            let cells = data.unit_series(unit, name).ok_or_else(|| missing(None))?;
            let available: Vec<f64> = cells.range(range.from..=range.to).map(|(_, v)| *v).collect();
            if available.is_empty() {
                return Err(missing(None));
            }
            if available.len() < range.len() {
                log::warn!(
                    "{unit}: {name} observed in {} of {} periods of {}-{}; averaging the available ones",
                    available.len(),
                    range.len(),
                    range.from,
                    range.to
                );
            }
            Ok(available.iter().sum::<f64>() / available.len() as f64)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::panel::{InferenceSettings, PanelBuilder};

    fn data() -> PanelDataset {
        let mut b = PanelBuilder::new();
        let gdp = [("SYR", [2900.0, 3100.0, 3000.0]), ("A", [2800.0, 2800.0, 2900.0]), ("B", [3200.0, 3200.0, 3300.0])];
        for (unit, values) in gdp {
            for (year, v) in (2004..).zip(values) {
                b.add_series(unit, "gdp", year, v).unwrap();
            }
        }
        b.add_constant("SYR", "lat", 35.0).unwrap();
        b.add_constant("A", "lat", 31.0).unwrap();
        b.add_constant("B", "lat", 41.0).unwrap();
        b.add_series("SYR", "trade", 2004, 1.0).unwrap();
        b.add_series("A", "trade", 2004, 2.0).unwrap();
        b.add_series("A", "trade", 2005, 4.0).unwrap();
        b.add_series("B", "trade", 2005, 8.0).unwrap();
        b.build()
    }

    fn spec(predictors: Vec<PredictorDef>) -> StudySpec {
        StudySpec {
            treated: "SYR".into(),
            donors: vec!["A".into(), "B".into()],
            excluded: vec![],
            outcome: "gdp".into(),
            t_start: 2004,
            training_end: 2004,
            t0: 2006,
            t_end: 2006,
            predictors,
            inference: InferenceSettings::default(),
        }
    }

    #[test]
    fn lag_is_a_direct_lookup() {
        let m = build_predictor_matrices(&data(), &spec(vec![PredictorDef::OutcomeLag {
            name: "gdp".into(),
            period: 2005,
        }]))
        .unwrap();
        assert_eq!(m.treated.as_slice(), &[3100.0]);
        assert_eq!(m.donors, DMatrix::from_row_slice(1, 2, &[2800.0, 3200.0]));
    }

    #[test]
    fn mean_over_range() {
        let m = build_predictor_matrices(&data(), &spec(vec![PredictorDef::OutcomeMean {
            name: "gdp".into(),
            from: 2004,
            to: 2005,
        }]))
        .unwrap();
        assert_eq!(m.treated.as_slice(), &[3000.0]);
        assert_eq!(m.periods, vec![2004, 2005]);
        assert_eq!(m.treated_outcome.as_slice(), &[2900.0, 3100.0]);
        assert_eq!(m.donors_outcome.shape(), (2, 2));
    }

    #[test]
    fn rows_follow_predictor_order() {
        let preds = vec![
            PredictorDef::Covariate { name: "lat".into(), from: None, to: None },
            PredictorDef::OutcomeLag { name: "gdp".into(), period: 2004 },
            PredictorDef::Covariate { name: "trade".into(), from: None, to: None },
        ];
        let m = build_predictor_matrices(&data(), &spec(preds)).unwrap();
        assert_eq!(m.donors.shape(), (3, 2));
        assert_eq!(m.donors.row(0).iter().copied().collect::<Vec<_>>(), vec![31.0, 41.0]);
        assert_eq!(m.donors.row(1).iter().copied().collect::<Vec<_>>(), vec![2800.0, 3200.0]);
        // trade averaged over available years only
        assert_eq!(m.treated[2], 1.0);
        assert_eq!(m.donors.row(2).iter().copied().collect::<Vec<_>>(), vec![3.0, 8.0]);
        assert_eq!(m.labels, vec!["lat", "gdp@2004", "trade"]);
    }

    #[test]
    fn missing_covariate_names_unit_and_variable() {
        let mut s = spec(vec![PredictorDef::Covariate { name: "trade".into(), from: Some(2004), to: Some(2004) }]);
        s.donors = vec!["B".into(), "A".into()];
        let err = build_predictor_matrices(&data(), &s).unwrap_err();
        assert_eq!(err.to_string(), "missing trade for unit B");
    }

    #[test]
    fn window_clamps_late_references() {
        let s = spec(vec![PredictorDef::OutcomeLag { name: "gdp".into(), period: 2005 }]);
        let m = build_predictor_matrices_in(&data(), &s, PeriodRange::new(2004, 2004)).unwrap();
        assert_eq!(m.treated.as_slice(), &[2900.0]);
        assert_eq!(m.periods, vec![2004]);
    }
}
