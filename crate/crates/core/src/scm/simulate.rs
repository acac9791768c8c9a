use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::ScmError;
use crate::panel::{
    InferenceSettings, PanelBuilder, PanelDataset, Period, PredictorDef, StudySpec,
};

/// Fully specified latent factor model
///
/// `Y[i,t] = eta[t] + pi[t]·Z[i] + mu[t]·phi[i] + sigma * eps[i,t]`, plus
/// `effect[t]` on unit 0 from `treatment_period` on. Unit 0 is the treated
/// unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorModelSpec {
    pub first_period: Period,
    pub treatment_period: Period,
    pub outcome: String,
    pub unit_names: Vec<String>,
    /// eta, one entry per period.
    pub common: Vec<f64>,
    /// Z, one row of r covariates per unit.
    pub covariates: Vec<Vec<f64>>,
    /// pi, one row of r loadings per period.
    pub covariate_loadings: Vec<Vec<f64>>,
    /// mu, one row of F factor values per period.
    pub factors: Vec<Vec<f64>>,
    /// phi, one row of F loadings per unit.
    pub factor_loadings: Vec<Vec<f64>>,
    pub noise_sd: f64,
    /// delta, one entry per period; only periods from `treatment_period` on apply.
    pub effect: Vec<f64>,
    pub seed: u64,
}

impl FactorModelSpec {
    pub fn n_periods(&self) -> usize {
        self.common.len()
    }

    pub fn n_units(&self) -> usize {
        self.unit_names.len()
    }

    pub fn periods(&self) -> impl Iterator<Item = Period> {
        let first = self.first_period;
        (0..self.n_periods() as Period).map(move |t| first + t)
    }

    fn check(&self) -> Result<(), ScmError> {
        let (n, t) = (self.n_units(), self.n_periods());
        let r = self.covariates.first().map_or(0, Vec::len);
        let f = self.factor_loadings.first().map_or(0, Vec::len);
        let rows_ok = |rows: &[Vec<f64>], count: usize, width: usize| {
            rows.len() == count && rows.iter().all(|row| row.len() == width)
        };
        let ok = n >= 1
            && t >= 1
            && rows_ok(&self.covariates, n, r)
            && rows_ok(&self.covariate_loadings, t, r)
            && rows_ok(&self.factors, t, f)
            && rows_ok(&self.factor_loadings, n, f)
            && self.effect.len() == t;
        if !ok {
            return Err(ScmError::Config(format!(
                "factor model dimensions inconsistent for {n} units, {t} periods, {r} covariates, {f} factors"
            )));
        }
        if !(self.noise_sd >= 0.0 && self.noise_sd.is_finite()) {
            return Err(ScmError::Config(format!("noise sd must be >= 0, got {}", self.noise_sd)));
        }
        Ok(())
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Draws a panel from the factor model.
///
/// Noise is drawn unit by unit, period by period from a ChaCha8 stream seeded
/// with `spec.seed`, so equal seeds give bitwise-equal panels. Covariates are
/// stored as time-invariant variables `z1..zr`.
pub fn simulate_factor_model(spec: &FactorModelSpec) -> Result<PanelDataset, ScmError> {
    spec.check()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut b = PanelBuilder::new();
    for (i, unit) in spec.unit_names.iter().enumerate() {
        for (t, period) in spec.periods().enumerate() {
            let eps: f64 = rng.sample(StandardNormal);
            let mut y = spec.common[t]
                + dot(&spec.covariate_loadings[t], &spec.covariates[i])
                + dot(&spec.factors[t], &spec.factor_loadings[i])
                + spec.noise_sd * eps;
            if i == 0 && period >= spec.treatment_period {
                y += spec.effect[t];
            }
            b.add_series(unit, &spec.outcome, period, y)?;
        }
        for (c, z) in spec.covariates[i].iter().enumerate() {
            b.add_constant(unit, &format!("z{}", c + 1), *z)?;
        }
    }
    Ok(b.build())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TreatedPlacement {
    /// Treated loadings are a convex combination of a few donors' loadings.
    #[default]
    Hull,
    /// Treated loadings are drawn like every donor's.
    Iid,
}

/// Compact recipe that expands into a random [`FactorModelSpec`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationDesign {
    pub n_donors: usize,
    pub n_pre: usize,
    pub n_post: usize,
    pub first_period: Period,
    pub n_factors: usize,
    pub n_covariates: usize,
    pub noise_sd: f64,
    /// Constant treatment effect over the post-period.
    pub effect: f64,
    /// AR(1) coefficient of each latent factor; 1 gives a random walk.
    pub factor_persistence: f64,
    pub treated: TreatedPlacement,
    /// Donors mixed into the treated unit under [`TreatedPlacement::Hull`];
    /// `None` mixes all of them, placing the treated unit in the interior of
    /// the donor hull.
    pub hull_size: Option<usize>,
    pub seed: u64,
    pub outcome: String,
}

impl Default for SimulationDesign {
    fn default() -> Self {
        Self {
            n_donors: 20,
            n_pre: 15,
            n_post: 10,
            first_period: 1,
            n_factors: 2,
            n_covariates: 1,
            noise_sd: 0.0,
            effect: 0.0,
            factor_persistence: 0.0,
            treated: TreatedPlacement::Hull,
            hull_size: None,
            seed: 0,
            outcome: "y".into(),
        }
    }
}

impl SimulationDesign {
    pub fn treated_name(&self) -> &'static str {
        "treated"
    }

    pub fn donor_names(&self) -> Vec<String> {
        let width = self.n_donors.to_string().len().max(2);
        (1..=self.n_donors).map(|i| format!("d{i:0width$}")).collect()
    }

    pub fn t0(&self) -> Period {
        self.first_period + self.n_pre as Period
    }

    pub fn t_end(&self) -> Period {
        self.t0() + self.n_post as Period - 1
    }

    /// Draws loadings, factors and covariates from a stream separate from the
    /// noise stream.
    pub fn build(&self) -> Result<FactorModelSpec, ScmError> {
        if self.n_donors < 1 || self.n_pre < 1 {
            return Err(ScmError::Config("design needs at least one donor and one pre-period".into()));
        }
        if !(0.0..=1.0).contains(&self.factor_persistence) {
            return Err(ScmError::Config(format!(
                "factor persistence must lie in [0, 1], got {}",
                self.factor_persistence
            )));
        }
        let n_units = self.n_donors + 1;
        let n_periods = self.n_pre + self.n_post;
        let (r, f) = (self.n_covariates, self.n_factors);
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(1);
        let mut normal = || -> f64 { rng.sample(StandardNormal) };

        let common: Vec<f64> = (0..n_periods).map(|t| 10.0 + 0.3 * t as f64 + 0.5 * normal()).collect();
        let covariate_loadings: Vec<Vec<f64>> =
            (0..n_periods).map(|_| (0..r).map(|_| 1.0 + 0.5 * normal()).collect()).collect();
        let mut factors: Vec<Vec<f64>> = Vec::with_capacity(n_periods);
        let rho = self.factor_persistence;
        let mut level: Vec<f64> = (0..f).map(|_| normal()).collect();
        for _ in 0..n_periods {
            for x in level.iter_mut() {
                *x = rho * *x + normal();
            }
            factors.push(level.clone());
        }

        let mut uniform = |n: usize| -> Vec<f64> { (0..n).map(|_| 2.0 * rng.random::<f64>()).collect() };
        let mut covariates = vec![Vec::new(); n_units];
        let mut factor_loadings = vec![Vec::new(); n_units];
        for i in 1..n_units {
            covariates[i] = uniform(r);
            factor_loadings[i] = uniform(f);
        }
        match self.treated {
            TreatedPlacement::Iid => {
                covariates[0] = uniform(r);
                factor_loadings[0] = uniform(f);
            }
            TreatedPlacement::Hull => {
                let m = self.hull_size.unwrap_or(self.n_donors).clamp(1, self.n_donors);
                let mut pool: Vec<usize> = (1..n_units).collect();
                let mut picked = Vec::with_capacity(m);
                for _ in 0..m {
                    let at = rng.random_range(0..pool.len());
                    picked.push(pool.swap_remove(at));
                }
                let raw: Vec<f64> = (0..m).map(|_| 0.2 + rng.random::<f64>()).collect();
                let total: f64 = raw.iter().sum();
                let mix = |rows: &[Vec<f64>], width: usize| -> Vec<f64> {
                    (0..width)
                        .map(|c| picked.iter().zip(&raw).map(|(&u, w)| w / total * rows[u][c]).sum())
                        .collect()
                };
                covariates[0] = mix(&covariates, r);
                factor_loadings[0] = mix(&factor_loadings, f);
            }
        }

        let mut unit_names = vec![self.treated_name().to_string()];
        unit_names.extend(self.donor_names());
        let effect = (0..n_periods)
            .map(|t| if t >= self.n_pre { self.effect } else { 0.0 })
            .collect();
        Ok(FactorModelSpec {
            first_period: self.first_period,
            treatment_period: self.t0(),
            outcome: self.outcome.clone(),
            unit_names,
            common,
            covariates,
            covariate_loadings,
            factors,
            factor_loadings,
            noise_sd: self.noise_sd,
            effect,
            seed: self.seed,
        })
    }

    /// A study over the simulated panel: all covariates, four evenly spaced
    /// outcome lags and the pre-period outcome mean as predictors; the last
    /// third of the pre-period is the validation window.
    pub fn default_study(&self) -> StudySpec {
        let t_start = self.first_period;
        let t0 = self.t0();
        let n_pre = self.n_pre as Period;
        let validation = (n_pre / 3).max(2);
        let mut predictors: Vec<PredictorDef> = (1..=self.n_covariates)
            .map(|c| PredictorDef::Covariate { name: format!("z{c}"), from: None, to: None })
            .collect();
        let mut lags: Vec<Period> = (0..4).map(|i| t_start + (n_pre - 1) * i / 3).collect();
        lags.dedup();
        predictors.extend(lags.into_iter().map(|period| PredictorDef::OutcomeLag {
            name: self.outcome.clone(),
            period,
        }));
        predictors.push(PredictorDef::OutcomeMean {
            name: self.outcome.clone(),
            from: t_start,
            to: t0 - 1,
        });
        StudySpec {
            treated: self.treated_name().into(),
            donors: self.donor_names(),
            excluded: Vec::new(),
            outcome: self.outcome.clone(),
            t_start,
            training_end: t0 - 1 - validation,
            t0,
            t_end: self.t_end(),
            predictors,
            inference: InferenceSettings::default(),
        }
    }
}
