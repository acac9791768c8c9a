use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{period_label, PanelBuilder, PanelDataset, PanelError, Period};

/// Column names of a long-format panel file.
///
/// Every row carries one observation. An empty period cell marks a
/// time-invariant covariate.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct PanelSchema {
    pub unit: String,
    pub period: String,
    pub variable: String,
    pub value: String,
}

impl Default for PanelSchema {
    fn default() -> Self {
        Self {
            unit: "unit".into(),
            period: "period".into(),
            variable: "variable".into(),
            value: "value".into(),
        }
    }
}

pub fn load_panel_csv(path: &Path, schema: &PanelSchema) -> Result<PanelDataset, PanelError> {
    let file = File::open(path).map_err(|source| PanelError::Io {
        path: path.to_owned(),
        source,
    })?;
    read_panel_csv(file, schema)
}

pub fn read_panel_csv<R: Read>(reader: R, schema: &PanelSchema) -> Result<PanelDataset, PanelError> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let column = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| PanelError::Schema(format!("missing column {name:?}")))
    };
    let (unit_col, period_col) = (column(&schema.unit)?, column(&schema.period)?);
    let (var_col, value_col) = (column(&schema.variable)?, column(&schema.value)?);

    let mut builder = PanelBuilder::new();
    let mut rows = 0usize;
    for record in rdr.records() {
        let record = record.map_err(|e| match e.position().map(csv::Position::line) {
            Some(line) => PanelError::from(e).at_line(line),
            None => PanelError::from(e),
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let cell = |i: usize| record.get(i).unwrap_or("");
        let mut row = || -> Result<(), PanelError> {
            let unit = cell(unit_col);
            let variable = cell(var_col);
            if unit.is_empty() || variable.is_empty() {
                return Err(PanelError::Schema("empty unit or variable cell".into()));
            }
            let raw_value = cell(value_col);
            let value = raw_value
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| PanelError::Parse {
                    value: raw_value.to_owned(),
                })?;
            let raw_period = cell(period_col);
            if raw_period.is_empty() {
                builder.add_constant(unit, variable, value)
            } else {
                let period = raw_period.parse::<Period>().map_err(|_| {
                    PanelError::Schema(format!("cannot parse period {raw_period:?}"))
                })?;
                builder.add_series(unit, variable, period, value)
            }
        };
        row().map_err(|e| e.at_line(line))?;
        rows += 1;
    }
    if rows == 0 {
        return Err(PanelError::Empty);
    }
    Ok(builder.build())
}

/// Writes the canonical `unit,period,variable,value` layout.
///
/// Values use the shortest decimal form that parses back to the same `f64`,
/// so a write/read cycle reproduces the dataset exactly.
pub fn write_panel_csv<W: Write>(data: &PanelDataset, writer: W) -> Result<(), PanelError> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(["unit", "period", "variable", "value"])?;
    for unit in &data.units {
        for (variable, by_unit) in &data.series {
            if let Some(cells) = by_unit.get(unit) {
                for (period, value) in cells {
                    wtr.write_record([
                        unit.as_str(),
                        &period_label(Some(*period)),
                        variable,
                        &value.to_string(),
                    ])?;
                }
            }
        }
        for (variable, by_unit) in &data.constants {
            if let Some(value) = by_unit.get(unit) {
                wtr.write_record([unit.as_str(), "", variable, &value.to_string()])?;
            }
        }
    }
    wtr.flush().map_err(|e| PanelError::Csv(e.into()))?;
    Ok(())
}
