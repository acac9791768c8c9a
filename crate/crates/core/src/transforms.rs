//! Predictor standardization and first-principal-component composites.
//!
//! Standard deviations use the population (divide by N) convention
//! throughout.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::panel::{PanelDataset, PanelError, Period, PeriodRange};

#[derive(Debug, Error)]
pub enum TransformError {
    #[error("predictor {0:?} has zero variance across units")]
    ZeroVariance(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("composite spec: {0}")]
    Spec(String),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error(transparent)]
    Panel(#[from] PanelError),
}

/// Per-predictor location and scale over the treated unit plus donors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StandardizationStats {
    pub means: Vec<f64>,
    pub sds: Vec<f64>,
}

impl StandardizationStats {
    /// Rescales predictor data with these (possibly foreign) statistics.
    pub fn apply(
        &self,
        treated: &DVector<f64>,
        donors: &DMatrix<f64>,
    ) -> Result<(DVector<f64>, DMatrix<f64>), TransformError> {
        let k = self.means.len();
        if treated.len() != k || donors.nrows() != k {
            return Err(TransformError::Dimension(format!(
                "stats for {k} predictors applied to {} / {} rows",
                treated.len(),
                donors.nrows()
            )));
        }
        let mut t = treated.clone();
        let mut d = donors.clone();
        for i in 0..k {
            let (m, s) = (self.means[i], self.sds[i]);
            t[i] = (t[i] - m) / s;
            d.row_mut(i).iter_mut().for_each(|x| *x = (*x - m) / s);
        }
        Ok((t, d))
    }
}

fn mean_and_sd(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    let var = values.map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn is_degenerate(mean: f64, sd: f64) -> bool {
    sd.is_nan() || sd <= 1e-12 * (1.0 + mean.abs())
}

/// Z-scores each predictor row of `[treated | donors]` across the J+1 units.
///
/// `labels`, when given, names the offending predictor in errors.
pub fn standardize_predictors(
    treated: &DVector<f64>,
    donors: &DMatrix<f64>,
    labels: Option<&[String]>,
) -> Result<(DVector<f64>, DMatrix<f64>, StandardizationStats), TransformError> {
    let k = treated.len();
    if k == 0 || donors.nrows() != k || donors.ncols() < 2 {
        return Err(TransformError::Dimension(format!(
            "need k >= 1 predictors and J >= 2 donors, got treated {k}, donors {}x{}",
            donors.nrows(),
            donors.ncols()
        )));
    }
    let mut means = Vec::with_capacity(k);
    let mut sds = Vec::with_capacity(k);
    for i in 0..k {
        let donor_row = donors.row(i);
        let (mean, sd) = mean_and_sd(std::iter::once(treated[i]).chain(donor_row.iter().copied()));
        if is_degenerate(mean, sd) {
            let name = labels
                .and_then(|l| l.get(i).cloned())
                .unwrap_or_else(|| format!("#{i}"));
            return Err(TransformError::ZeroVariance(name));
        }
        means.push(mean);
        sds.push(sd);
    }
    let stats = StandardizationStats { means, sds };
    let (t, d) = stats.apply(treated, donors)?;
    Ok((t, d, stats))
}

/// Indicators pooled into one composite index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompositeSpec {
    pub indicators: Vec<String>,
    pub from: Period,
    pub to: Period,
    /// Indicator whose loading is forced positive; the first one by default.
    #[serde(default)]
    pub anchor: Option<String>,
}

impl CompositeSpec {
    fn anchor_index(&self) -> Result<usize, TransformError> {
        if self.indicators.len() < 2 {
            return Err(TransformError::Spec("at least two indicators required".into()));
        }
        match &self.anchor {
            None => Ok(0),
            Some(a) => self
                .indicators
                .iter()
                .position(|i| i == a)
                .ok_or_else(|| TransformError::Spec(format!("anchor {a:?} is not an indicator"))),
        }
    }
}

/// Leading principal component of a pooled indicator panel.
#[derive(Debug, Clone, PartialEq)]
pub struct CompositeScores {
    pub loadings: Vec<f64>,
    pub eigenvalue: f64,
    /// Share of total standardized variance carried by the component.
    pub explained: f64,
    /// `max |C v - lambda v|` on the correlation matrix.
    pub residual: f64,
    pub means: Vec<f64>,
    pub sds: Vec<f64>,
    pub scores: BTreeMap<(String, Period), f64>,
}

impl CompositeScores {
    /// Stores the scores as a new series named `name`.
    pub fn insert_into(&self, data: &mut PanelDataset, name: &str) -> Result<(), PanelError> {
        data.insert_series(
            name,
            self.scores.iter().map(|((u, p), v)| (u.clone(), *p, *v)),
        )
    }
}

/// Pooled-panel first principal component of the correlation matrix.
///
/// Only (unit, period) cells where every indicator is observed enter. The
/// sign of the eigenvector is fixed so that the anchor loading is positive.
pub fn pca_first_component(
    data: &PanelDataset,
    spec: &CompositeSpec,
) -> Result<CompositeScores, TransformError> {
    let anchor = spec.anchor_index()?;
    for name in &spec.indicators {
        if !data.has_series(name) {
            return Err(TransformError::InsufficientData(format!("indicator {name:?} not in panel")));
        }
    }
    let window = PeriodRange::new(spec.from, spec.to);
    let p = spec.indicators.len();

    let mut keys = Vec::new();
    let mut rows: Vec<f64> = Vec::new();
    for unit in data.units() {
        for period in window.periods() {
            let obs: Option<Vec<f64>> = spec
                .indicators
                .iter()
                .map(|name| data.value(unit, name, period))
                .collect();
            if let Some(obs) = obs {
                keys.push((unit.clone(), period));
                rows.extend(obs);
            }
        }
    }
    let n = keys.len();
    if n < 2 {
        return Err(TransformError::InsufficientData(format!(
            "{n} complete indicator observation(s) in {}-{}",
            spec.from, spec.to
        )));
    }
    let mut z = DMatrix::from_row_slice(n, p, &rows);
    let mut means = Vec::with_capacity(p);
    let mut sds = Vec::with_capacity(p);
    for (c, name) in spec.indicators.iter().enumerate() {
        let (mean, sd) = mean_and_sd(z.column(c).iter().copied());
        if is_degenerate(mean, sd) {
            return Err(TransformError::ZeroVariance(name.clone()));
        }
        z.column_mut(c).iter_mut().for_each(|x| *x = (*x - mean) / sd);
        means.push(mean);
        sds.push(sd);
    }

    let corr = (z.transpose() * &z) / n as f64;
    let corr = (&corr + corr.transpose()) * 0.5;
    let eig = SymmetricEigen::new(corr.clone());
    let lead = eig
        .eigenvalues
        .iter()
        .enumerate()
        .fold(0, |best, (i, &l)| if l > eig.eigenvalues[best] { i } else { best });
    let eigenvalue = eig.eigenvalues[lead];
    let mut v: DVector<f64> = eig.eigenvectors.column(lead).into_owned();
    v /= v.norm();
    let sign_ref = if v[anchor] != 0.0 {
        v[anchor]
    } else {
        v.iter().copied().find(|x| *x != 0.0).unwrap_or(1.0)
    };
    if sign_ref < 0.0 {
        v.neg_mut();
    }
    let residual = (&corr * &v - &v * eigenvalue).amax();
    let trace: f64 = corr.diagonal().sum();

    let projected = &z * &v;
    let scores = keys.into_iter().zip(projected.iter().copied()).collect();
    Ok(CompositeScores {
        loadings: v.iter().copied().collect(),
        eigenvalue,
        explained: eigenvalue / trace,
        residual,
        means,
        sds,
        scores,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::panel::PanelBuilder;

    #[test]
    fn standardizes_one_two_three() {
        let t = DVector::from_vec(vec![1.0]);
        let d = DMatrix::from_row_slice(1, 2, &[2.0, 3.0]);
        let (ts, ds, stats) = standardize_predictors(&t, &d, None).unwrap();
        // population sd of (1,2,3) is sqrt(2/3); (1-2)/sqrt(2/3) = -1.224744871391589
        let expected = 1.5f64.sqrt();
        assert!((ts[0] + expected).abs() < 1e-12);
        assert!(ds[(0, 0)].abs() < 1e-15);
        assert!((ds[(0, 1)] - expected).abs() < 1e-12);
        assert!((stats.sds[0] - (2.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert!((ts[0] + 1.2247).abs() < 1e-4);
    }

    #[test]
    fn standardizing_twice_is_a_fixed_point() {
        let t = DVector::from_vec(vec![0.3, 10.0]);
        let d = DMatrix::from_row_slice(2, 3, &[1.0, -2.0, 0.5, 7.0, 8.0, 12.0]);
        let (t1, d1, _) = standardize_predictors(&t, &d, None).unwrap();
        let (t2, d2, _) = standardize_predictors(&t1, &d1, None).unwrap();
        assert!((t1 - t2).amax() < 1e-12);
        assert!((d1 - d2).amax() < 1e-12);
    }

    #[test]
    fn constant_row_is_rejected_by_name() {
        let t = DVector::from_vec(vec![5.0, 1.0]);
        let d = DMatrix::from_row_slice(2, 2, &[5.0, 5.0, 2.0, 3.0]);
        let labels = vec!["legal_origin".to_string(), "gdp".to_string()];
        let err = standardize_predictors(&t, &d, Some(&labels)).unwrap_err();
        assert_eq!(err.to_string(), "predictor \"legal_origin\" has zero variance across units");
    }

    fn indicator_panel(f: impl Fn(usize, i32) -> (f64, f64)) -> PanelDataset {
        let mut b = PanelBuilder::new();
        for u in 0..5 {
            for year in 2000..2004 {
                let (a, c) = f(u, year);
                b.add_series(&format!("u{u}"), "a", year, a).unwrap();
                b.add_series(&format!("u{u}"), "b", year, c).unwrap();
            }
        }
        b.build()
    }

    #[test]
    fn perfectly_correlated_indicators() {
        let d = indicator_panel(|u, y| {
            let x = (u as f64) * 1.3 + (y - 2000) as f64 * 0.7;
            (x, 3.0 * x + 1.0)
        });
        let spec = CompositeSpec { indicators: vec!["a".into(), "b".into()], from: 2000, to: 2003, anchor: None };
        let pc = pca_first_component(&d, &spec).unwrap();
        let h = 0.5f64.sqrt();
        assert!((pc.loadings[0] - h).abs() < 1e-12 && (pc.loadings[1] - h).abs() < 1e-12);
        assert!((pc.explained - 1.0).abs() < 1e-12);
        assert!(pc.residual <= 1e-10);
        assert_eq!(pc.scores.len(), 20);
    }

    #[test]
    fn uncorrelated_indicators_follow_the_anchor() {
        // a and b orthogonal after centering: a = +-1 pattern, b = +-1 pattern
        let d = indicator_panel(|u, y| {
            let a = if u % 2 == 0 { 1.0 } else { -1.0 };
            let b = if y % 2 == 0 { 1.0 } else { -1.0 };
            (a, b)
        });
        // 5 units: three +1 and two -1 -> mean 0.2, still uncorrelated with b.
        for (anchor, axis) in [("a", 0usize), ("b", 1)] {
            let spec = CompositeSpec {
                indicators: vec!["a".into(), "b".into()],
                from: 2000,
                to: 2003,
                anchor: Some(anchor.into()),
            };
            let pc = pca_first_component(&d, &spec).unwrap();
            assert!((pc.eigenvalue - 1.0).abs() < 1e-12);
            let big = pc.loadings.iter().copied().fold(0.0f64, |m, x| m.max(x.abs()));
            let small = pc.loadings.iter().copied().fold(1.0f64, |m, x| m.min(x.abs()));
            assert!((big - 1.0).abs() < 1e-12 && small < 1e-12, "{:?}", pc.loadings);
            if pc.loadings[axis].abs() > 0.5 {
                assert!(pc.loadings[axis] > 0.0);
            } else {
                assert!(pc.loadings.iter().all(|x| *x >= 0.0));
            }
            assert!(pc.residual <= 1e-10);
        }
    }

    #[test]
    fn pca_errors() {
        let d = indicator_panel(|u, y| (u as f64, y as f64));
        let one = CompositeSpec { indicators: vec!["a".into()], from: 2000, to: 2003, anchor: None };
        assert!(matches!(pca_first_component(&d, &one), Err(TransformError::Spec(_))));
        let none = CompositeSpec { indicators: vec!["a".into(), "b".into()], from: 1990, to: 1991, anchor: None };
        assert!(matches!(pca_first_component(&d, &none), Err(TransformError::InsufficientData(_))));
        let bad = CompositeSpec { indicators: vec!["a".into(), "b".into()], from: 2000, to: 2003, anchor: Some("c".into()) };
        assert!(pca_first_component(&d, &bad).is_err());
    }

    #[test]
    fn scores_insert_as_series() {
        let mut d = indicator_panel(|u, y| ((u * u) as f64, (y - 2000) as f64 + u as f64));
        let spec = CompositeSpec { indicators: vec!["a".into(), "b".into()], from: 2000, to: 2003, anchor: None };
        let pc = pca_first_component(&d, &spec).unwrap();
        pc.insert_into(&mut d, "inst").unwrap();
        assert_eq!(d.value("u1", "inst", 2001), pc.scores.get(&("u1".to_string(), 2001)).copied());
    }
}
