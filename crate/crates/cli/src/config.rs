//! Study configuration files.
//!
//! The grammar is documented in `docs/config.md`.

use std::path::{Path, PathBuf};

use serde::Deserialize;
use sha2::{Digest, Sha256};

use synthcontrol::panel::{
    load_panel_csv, ExcludedUnit, InferenceSettings, PanelDataset, PanelSchema, Period,
    PredictorDef, StudySpec,
};
use synthcontrol::robustness::RefitMode;
use synthcontrol::transforms::{pca_first_component, CompositeScores, CompositeSpec};

use crate::CliError;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyConfig {
    pub data: DataConfig,
    pub study: StudySection,
    #[serde(default)]
    pub composites: Vec<CompositeConfig>,
    #[serde(default)]
    pub run: RunConfig,
    #[serde(default)]
    pub robustness: RobustnessConfig,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// Panel CSV files, relative to the config file.
    pub panels: Vec<PathBuf>,
    #[serde(default)]
    pub schema: PanelSchema,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudySection {
    pub treated: String,
    /// Every other non-excluded unit of the panel when omitted.
    pub donors: Option<Vec<String>>,
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

#[derive(Debug, Clone, Deserialize)]
pub struct CompositeConfig {
    /// Name of the derived series.
    pub name: String,
    #[serde(flatten)]
    pub spec: CompositeSpec,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// 0 uses every available core.
    pub jobs: usize,
    /// Output directory, relative to the config file.
    pub out: Option<PathBuf>,
    pub loose_feasibility: bool,
    pub tolerance: Option<f64>,
    pub max_iterations: Option<usize>,
    /// Skip the SVG charts.
    pub no_plots: bool,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RobustnessConfig {
    pub mode: RefitMode,
    pub leave_one_out: bool,
    pub in_time: Vec<Period>,
    pub pools: Vec<PoolConfig>,
}

impl Default for RobustnessConfig {
    fn default() -> Self {
        Self {
            mode: RefitMode::Reoptimize,
            leave_one_out: true,
            in_time: Vec::new(),
            pools: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoolConfig {
    pub name: String,
    pub keep: Vec<String>,
}

/// A parsed config with its panel loaded and composites attached.
#[derive(Debug, Clone)]
pub struct LoadedStudy {
    pub config: StudyConfig,
    pub path: PathBuf,
    /// Hex SHA-256 of the config file bytes.
    pub config_hash: String,
    pub data: PanelDataset,
    pub spec: StudySpec,
    pub composites: Vec<(String, CompositeScores)>,
}

impl LoadedStudy {
    pub fn base_dir(&self) -> &Path {
        base_dir(&self.path)
    }
}

fn base_dir(path: &Path) -> &Path {
    path.parent().unwrap_or_else(|| Path::new("."))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub(crate) fn read_config_bytes(path: &Path) -> Result<Vec<u8>, CliError> {
    std::fs::read(path).map_err(|e| CliError::Io(format!("cannot read config {}: {e}", path.display())))
}

pub(crate) fn parse_toml<T: for<'de> Deserialize<'de>>(path: &Path, bytes: &[u8]) -> Result<T, CliError> {
    let text = std::str::from_utf8(bytes)
        .map_err(|_| CliError::Config(format!("{}: not valid UTF-8", path.display())))?;
    toml::from_str(text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

pub fn parse_study_config(path: &Path, bytes: &[u8]) -> Result<StudyConfig, CliError> {
    parse_toml(path, bytes)
}

/// Reads the config, loads and merges the panels, builds composites and
/// resolves the donor pool. Does not validate the study.
pub fn load_study(path: &Path) -> Result<LoadedStudy, CliError> {
    let bytes = read_config_bytes(path)?;
    let config = parse_study_config(path, &bytes)?;
    let dir = base_dir(path);

    if config.data.panels.is_empty() {
        return Err(CliError::Config("data.panels lists no files".into()));
    }
    let mut data = PanelDataset::default();
    for file in &config.data.panels {
        let full = dir.join(file);
        let part = load_panel_csv(&full, &config.data.schema).map_err(|e| match e {
            synthcontrol::panel::PanelError::Io { .. } => CliError::Io(e.to_string()),
            other => CliError::Config(format!("{}: {other}", full.display())),
        })?;
        data.merge(&part)
            .map_err(|e| CliError::Config(format!("{}: {e}", full.display())))?;
    }

    let mut composites = Vec::new();
    for c in &config.composites {
        let scores = pca_first_component(&data, &c.spec)
            .map_err(|e| CliError::Config(format!("composite {}: {e}", c.name)))?;
        scores
            .insert_into(&mut data, &c.name)
            .map_err(|e| CliError::Config(format!("composite {}: {e}", c.name)))?;
        composites.push((c.name.clone(), scores));
    }

    let s = &config.study;
    let donors = match &s.donors {
        Some(d) => d.clone(),
        None => data
            .units()
            .iter()
            .filter(|u| **u != s.treated && !s.excluded.iter().any(|e| &e.unit == *u))
            .cloned()
            .collect(),
    };
    let spec = StudySpec {
        treated: s.treated.clone(),
        donors,
        excluded: s.excluded.clone(),
        outcome: s.outcome.clone(),
        t_start: s.t_start,
        training_end: s.training_end,
        t0: s.t0,
        t_end: s.t_end,
        predictors: s.predictors.clone(),
        inference: s.inference.clone(),
    };
    Ok(LoadedStudy {
        path: path.to_path_buf(),
        config_hash: sha256_hex(&bytes),
        config,
        data,
        spec,
        composites,
    })
}
