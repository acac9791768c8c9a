//! Report files. Formats are documented in `docs/formats.md`.

use std::fs;
use std::path::Path;

use serde::Serialize;

use synthcontrol::inference::{PValueSeries, PlaceboEnsemble};
use synthcontrol::robustness::RobustnessReport;
use synthcontrol::scm::{QpDiagnostics, SyntheticControlFit};
use synthcontrol::transforms::CompositeScores;

use crate::svg::{Chart, Line};
use crate::CliError;

/// Shortest decimal that parses back to the same `f64`, in exponent form
/// for very small or very large magnitudes.
pub fn num(v: f64) -> String {
    let a = v.abs();
    if a != 0.0 && a.is_finite() && !(1e-5..1e16).contains(&a) {
        format!("{v:e}")
    } else {
        v.to_string()
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

fn csv_file(path: &Path) -> Result<csv::Writer<fs::File>, CliError> {
    csv::Writer::from_path(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn finish(mut w: csv::Writer<fs::File>, path: &Path) -> Result<(), CliError> {
    w.flush().map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn row<W: std::io::Write>(w: &mut csv::Writer<W>, fields: &[String], path: &Path) -> Result<(), CliError> {
    w.write_record(fields)
        .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn header(names: &[&str]) -> Vec<String> {
    names.iter().map(|s| s.to_string()).collect()
}

pub fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

/// `unit,weight`, one row per donor in pool order, zeros included.
pub fn write_weights(path: &Path, fit: &SyntheticControlFit) -> Result<(), CliError> {
    let mut w = csv_file(path)?;
    row(&mut w, &header(&["unit", "weight"]), path)?;
    for (unit, weight) in fit.donors.iter().zip(fit.weights.iter()) {
        row(&mut w, &[unit.clone(), num(*weight)], path)?;
    }
    finish(w, path)
}

/// `period,observed,synthetic,gap` over the full window.
pub fn write_gaps(path: &Path, fit: &SyntheticControlFit) -> Result<(), CliError> {
    let mut w = csv_file(path)?;
    row(&mut w, &header(&["period", "observed", "synthetic", "gap"]), path)?;
    for (i, period) in fit.gaps.periods.iter().enumerate() {
        row(
            &mut w,
            &[
                period.to_string(),
                num(fit.observed.values[i]),
                num(fit.synthetic.values[i]),
                num(fit.gaps.values[i]),
            ],
            path,
        )?;
    }
    finish(w, path)
}

/// `predictor,weight,treated,synthetic` in raw predictor units.
pub fn write_balance(path: &Path, fit: &SyntheticControlFit) -> Result<(), CliError> {
    let mut w = csv_file(path)?;
    row(&mut w, &header(&["predictor", "weight", "treated", "synthetic"]), path)?;
    for (b, v) in fit.predictor_balance.iter().zip(fit.predictor_weights.as_slice()) {
        row(&mut w, &[b.predictor.clone(), num(*v), num(b.treated), num(b.synthetic)], path)?;
    }
    finish(w, path)
}

pub fn write_paths_svg(path: &Path, fit: &SyntheticControlFit, outcome: &str) -> Result<(), CliError> {
    let pts = |s: &synthcontrol::scm::Series| s.iter().map(|(t, v)| (t as f64, v)).collect();
    let title = format!("{}: observed vs synthetic {outcome}", fit.treated);
    let chart = Chart {
        title: &title,
        y_label: outcome,
        marker: Some(fit.t0 as f64),
        zero_line: false,
        lines: vec![
            Line { label: &fit.treated, color: "#000000", width: 2.0, dashed: false, points: pts(&fit.observed) },
            Line { label: "synthetic", color: "#1f77b4", width: 2.0, dashed: true, points: pts(&fit.synthetic) },
        ],
    };
    write_text(path, &chart.render())
}

#[derive(Debug, Serialize)]
pub struct WeightEntry {
    pub predictor: String,
    pub weight: f64,
}

#[derive(Debug, Serialize)]
pub struct SearchSummary {
    pub validation_mspe: f64,
    pub training_mspe: f64,
    pub evaluations: usize,
}

#[derive(Debug, Serialize)]
pub struct CompositeSummary {
    pub name: String,
    pub loadings: Vec<(String, f64)>,
    pub eigenvalue: f64,
    pub explained_share: f64,
    pub eigen_residual: f64,
}

impl CompositeSummary {
    pub fn new(name: &str, scores: &CompositeScores, indicators: &[String]) -> Self {
        Self {
            name: name.into(),
            loadings: indicators.iter().cloned().zip(scores.loadings.iter().copied()).collect(),
            eigenvalue: scores.eigenvalue,
            explained_share: scores.explained,
            eigen_residual: scores.residual,
        }
    }
}

#[derive(Debug, Serialize)]
pub struct InferenceSummary {
    pub end_of_sample_p: f64,
    pub numerator: usize,
    pub denominator: usize,
    pub placebos: usize,
    pub included: usize,
}

/// Contents of `summary.json`. Contains no timestamps.
#[derive(Debug, Serialize)]
pub struct FitSummary {
    pub config_sha256: String,
    pub seed: u64,
    pub loose_feasibility: bool,
    pub treated: String,
    pub outcome: String,
    pub t_start: i32,
    pub training_end: i32,
    pub t0: i32,
    pub t_end: i32,
    pub donors: usize,
    pub end_of_sample_delta: f64,
    pub pre_rmspe: f64,
    pub att: f64,
    pub predictor_weights: Vec<WeightEntry>,
    pub qp: QpDiagnostics,
    pub predictor_search: Option<SearchSummary>,
    pub composites: Vec<CompositeSummary>,
    pub inference: Option<InferenceSummary>,
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Io(e.to_string()))?;
    text.push('\n');
    write_text(path, &text)
}

/// `period,p,numerator,denominator` per post-period.
pub fn write_pvalues(path: &Path, p: &PValueSeries) -> Result<(), CliError> {
    let mut w = csv_file(path)?;
    row(&mut w, &header(&["period", "p", "numerator", "denominator"]), path)?;
    for v in &p.values {
        row(
            &mut w,
            &[v.period.to_string(), num(v.p), v.numerator.to_string(), v.denominator.to_string()],
            path,
        )?;
    }
    finish(w, path)
}

/// `unit,period,gap,excluded` for the treated unit then every placebo.
pub fn write_placebo_gaps(path: &Path, e: &PlaceboEnsemble) -> Result<(), CliError> {
    let mut w = csv_file(path)?;
    row(&mut w, &header(&["unit", "period", "gap", "excluded"]), path)?;
    for (t, g) in e.treated.gaps.iter() {
        row(&mut w, &[e.treated.treated.clone(), t.to_string(), num(g), "false".into()], path)?;
    }
    for p in &e.placebos {
        for (t, g) in p.gaps.iter() {
            row(&mut w, &[p.unit.clone(), t.to_string(), num(g), p.excluded.to_string()], path)?;
        }
    }
    finish(w, path)
}

/// `unit,pre_rmspe,ratio,status,reason`, one row per placebo.
pub fn write_exclusions(path: &Path, e: &PlaceboEnsemble) -> Result<(), CliError> {
    let mut w = csv_file(path)?;
    row(&mut w, &header(&["unit", "pre_rmspe", "ratio", "status", "reason"]), path)?;
    for p in &e.placebos {
        let ratio = if p.is_failure() { String::new() } else { num(p.pre_rmspe / e.treated.pre_rmspe) };
        let pre = if p.is_failure() { String::new() } else { num(p.pre_rmspe) };
        let status = if p.excluded { "excluded" } else { "included" };
        let reason = match (&p.exclusion_reason, &p.failure) {
            (Some(r), Some(f)) => format!("{r}: {f}"),
            (Some(r), None) => r.clone(),
            _ => String::new(),
        };
        row(&mut w, &[p.unit.clone(), pre, ratio, status.into(), reason], path)?;
    }
    finish(w, path)
}

pub fn write_placebo_svg(path: &Path, e: &PlaceboEnsemble) -> Result<(), CliError> {
    let mut lines: Vec<Line> = e
        .placebos
        .iter()
        .filter(|p| !p.excluded)
        .map(|p| Line {
            label: "",
            color: "#bbbbbb",
            width: 1.0,
            dashed: false,
            points: p.gaps.iter().map(|(t, g)| (t as f64, g)).collect(),
        })
        .collect();
    lines.push(Line {
        label: &e.treated.treated,
        color: "#000000",
        width: 2.0,
        dashed: false,
        points: e.treated.gaps.iter().map(|(t, g)| (t as f64, g)).collect(),
    });
    let title = format!("{} gap and included placebo gaps", e.treated.treated);
    let chart = Chart { title: &title, y_label: "gap", marker: Some(e.treated.t0 as f64), zero_line: true, lines };
    write_text(path, &chart.render())
}

/// File-name-safe form of a variant label.
pub fn slug(label: &str) -> String {
    label
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' { c } else { '_' })
        .collect()
}

/// Combined robustness table in ranking order.
pub fn write_ranking(path: &Path, reports: &[RobustnessReport]) -> Result<(), CliError> {
    let mut w = csv_file(path)?;
    row(
        &mut w,
        &header(&[
            "rank",
            "variant",
            "status",
            "att",
            "att_delta",
            "end_of_sample_delta_diff",
            "pre_rmspe",
            "pre_rmspe_delta",
            "weight_l1",
            "qp_objective",
            "note",
        ]),
        path,
    )?;
    for (i, r) in reports.iter().enumerate() {
        let status = if r.is_feasible() { "ok" } else { "infeasible" };
        row(
            &mut w,
            &[
                (i + 1).to_string(),
                r.label.clone(),
                status.into(),
                opt(r.fit.as_ref().map(|f| f.att)),
                opt(r.att_delta()),
                opt(r.end_of_sample_delta_diff()),
                opt(r.fit.as_ref().map(|f| f.pre_rmspe)),
                opt(r.pre_rmspe_delta()),
                opt(r.weight_l1()),
                opt(r.fit.as_ref().map(|f| f.qp.objective)),
                r.infeasible.clone().unwrap_or_default(),
            ],
            path,
        )?;
    }
    finish(w, path)
}
