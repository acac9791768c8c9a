//! Subcommand implementations. All files are written from the calling thread.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::Serialize;

use synthcontrol::inference::{empirical_p_values, exclusion_breakdown, placebos_for, InferenceError};
use synthcontrol::panel::{validate_study, write_panel_csv, StudySpec};
use synthcontrol::par;
use synthcontrol::qp::LOOSE_TOLERANCE;
use synthcontrol::robustness::{
    in_time_placebo, leave_one_out, rank_by_att_delta, restricted_pool, RobustnessReport,
};
use synthcontrol::scm::{
    fit_synthetic_control, simulate_factor_model, FitOptions, SimulationDesign, SyntheticControlFit,
};

use crate::config::{load_study, parse_toml, read_config_bytes, LoadedStudy};
use crate::output::{self, CompositeSummary, FitSummary, InferenceSummary, SearchSummary, WeightEntry};
use crate::{CliError, CommonArgs};

/// Effective run settings after command-line overrides.
#[derive(Debug, Clone)]
pub struct RunSettings {
    pub out: PathBuf,
    pub seed: u64,
    pub jobs: usize,
    pub loose: bool,
    pub plots: bool,
    pub opts: FitOptions,
}

pub fn run_settings(study: &LoadedStudy, args: &CommonArgs) -> RunSettings {
    let run = &study.config.run;
    let out = match (&args.out, &run.out) {
        (Some(o), _) => o.clone(),
        (None, Some(o)) => study.base_dir().join(o),
        (None, None) => study.base_dir().join("out"),
    };
    let seed = args.seed.unwrap_or(run.seed);
    let loose = args.loose_feasibility || run.loose_feasibility;
    let mut opts = FitOptions::with_seed(seed);
    opts.qp.loose = loose;
    if let Some(tol) = run.tolerance {
        opts.qp.tol = tol;
    }
    if let Some(n) = run.max_iterations {
        opts.qp.max_iter = n;
    }
    if loose {
        log::info!("loose feasibility: kkt tolerance {LOOSE_TOLERANCE}");
    }
    RunSettings {
        out,
        seed,
        jobs: args.jobs.unwrap_or(run.jobs),
        loose,
        plots: !run.no_plots,
        opts,
    }
}

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("cannot create {}: {e}", dir.display())))
}

fn say(stdout: &mut dyn Write, text: std::fmt::Arguments) {
    let _ = writeln!(stdout, "{text}");
}

fn check_study(study: &LoadedStudy) -> Result<(), CliError> {
    let report = validate_study(&study.data, &study.spec);
    if report.is_clean() {
        Ok(())
    } else {
        Err(CliError::Violations(report))
    }
}

fn compute(e: impl std::fmt::Display) -> CliError {
    CliError::Compute(e.to_string())
}

pub fn cmd_validate(args: &CommonArgs, stdout: &mut dyn Write) -> Result<(), CliError> {
    let study = load_study(&args.config)?;
    let report = validate_study(&study.data, &study.spec);
    say(stdout, format_args!("{report}"));
    if report.is_clean() {
        Ok(())
    } else {
        Err(CliError::Violations(report))
    }
}

fn fit_summary(
    study: &LoadedStudy,
    settings: &RunSettings,
    fit: &SyntheticControlFit,
    inference: Option<InferenceSummary>,
) -> FitSummary {
    let spec = &study.spec;
    FitSummary {
        config_sha256: study.config_hash.clone(),
        seed: settings.seed,
        loose_feasibility: settings.loose,
        treated: spec.treated.clone(),
        outcome: spec.outcome.clone(),
        t_start: spec.t_start,
        training_end: spec.training_end,
        t0: spec.t0,
        t_end: spec.t_end,
        donors: spec.donors.len(),
        end_of_sample_delta: fit.end_of_sample_delta,
        pre_rmspe: fit.pre_rmspe,
        att: fit.att,
        predictor_weights: fit
            .predictor_balance
            .iter()
            .zip(fit.predictor_weights.as_slice())
            .map(|(b, w)| WeightEntry { predictor: b.predictor.clone(), weight: *w })
            .collect(),
        qp: fit.qp.clone(),
        predictor_search: fit.v_search.as_ref().map(|s| SearchSummary {
            validation_mspe: s.validation_mspe,
            training_mspe: s.training_mspe,
            evaluations: s.evaluations,
        }),
        composites: study
            .composites
            .iter()
            .zip(&study.config.composites)
            .map(|((name, scores), c)| CompositeSummary::new(name, scores, &c.spec.indicators))
            .collect(),
        inference,
    }
}

fn write_fit_files(
    study: &LoadedStudy,
    settings: &RunSettings,
    fit: &SyntheticControlFit,
    inference: Option<InferenceSummary>,
) -> Result<(), CliError> {
    let out = &settings.out;
    output::write_weights(&out.join("weights.csv"), fit)?;
    output::write_gaps(&out.join("gaps.csv"), fit)?;
    output::write_balance(&out.join("balance.csv"), fit)?;
    output::write_json(&out.join("summary.json"), &fit_summary(study, settings, fit, inference))?;
    if settings.plots {
        output::write_paths_svg(&out.join("paths.svg"), fit, &study.spec.outcome)?;
    }
    Ok(())
}

fn report_fit(stdout: &mut dyn Write, fit: &SyntheticControlFit) {
    say(
        stdout,
        format_args!(
            "att {} | end-of-sample delta {} | pre rmspe {}",
            fit.att, fit.end_of_sample_delta, fit.pre_rmspe
        ),
    );
    let mut top: Vec<(&String, f64)> = fit.donors.iter().zip(fit.weights.iter().copied()).filter(|(_, w)| *w > 1e-6).collect();
    top.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    for (unit, w) in top.iter().take(10) {
        say(stdout, format_args!("  {unit}: {w:.4}"));
    }
}

fn fit_study(study: &LoadedStudy, settings: &RunSettings) -> Result<SyntheticControlFit, CliError> {
    check_study(study)?;
    par::install(settings.jobs, || fit_synthetic_control(&study.data, &study.spec, &settings.opts)).map_err(compute)
}

pub fn cmd_fit(args: &CommonArgs, stdout: &mut dyn Write) -> Result<SyntheticControlFit, CliError> {
    let study = load_study(&args.config)?;
    let settings = run_settings(&study, args);
    let fit = fit_study(&study, &settings)?;
    ensure_dir(&settings.out)?;
    write_fit_files(&study, &settings, &fit, None)?;
    report_fit(stdout, &fit);
    say(stdout, format_args!("wrote {}", settings.out.display()));
    Ok(fit)
}

pub fn cmd_placebo(args: &CommonArgs, stdout: &mut dyn Write) -> Result<(), CliError> {
    let study = load_study(&args.config)?;
    let settings = run_settings(&study, args);
    let fit = Arc::new(fit_study(&study, &settings)?);
    let ensemble = par::install(settings.jobs, || placebos_for(&study.data, &study.spec, Arc::clone(&fit), &settings.opts));
    ensure_dir(&settings.out)?;
    let out = &settings.out;
    output::write_placebo_gaps(&out.join("placebo_gaps.csv"), &ensemble)?;
    output::write_exclusions(&out.join("exclusions.csv"), &ensemble)?;
    if settings.plots {
        output::write_placebo_svg(&out.join("placebo_gaps.svg"), &ensemble)?;
    }
    for p in ensemble.placebos.iter().filter(|p| p.excluded) {
        say(stdout, format_args!("excluded {}: {}", p.unit, p.exclusion_reason.as_deref().unwrap_or("")));
    }
    let pvalues = match empirical_p_values(&ensemble, &study.spec.inference) {
        Ok(p) => p,
        Err(e @ InferenceError::EmptyReference { .. }) => {
            write_fit_files(&study, &settings, &fit, None)?;
            return Err(CliError::Compute(format!(
                "{e}; filters: discard above {}x treated pre-rmspe, inclusion {}",
                study.spec.inference.mspe_discard_ratio,
                if study.spec.inference.apply_inclusion_filter {
                    format!("above {}x", study.spec.inference.mspe_inclusion_ratio)
                } else {
                    "off".into()
                }
            )));
        }
        Err(e) => return Err(compute(e)),
    };
    output::write_pvalues(&out.join("pvalues.csv"), &pvalues)?;
    let end = pvalues.end_of_sample();
    let summary = InferenceSummary {
        end_of_sample_p: end.p,
        numerator: end.numerator,
        denominator: end.denominator,
        placebos: ensemble.placebos.len(),
        included: ensemble.n_included(),
    };
    write_fit_files(&study, &settings, &fit, Some(summary))?;
    report_fit(stdout, &fit);
    say(
        stdout,
        format_args!(
            "end-of-sample p {} ({}/{}); exclusions: {}",
            end.p,
            end.numerator,
            end.denominator,
            exclusion_breakdown(&ensemble)
        ),
    );
    say(stdout, format_args!("wrote {}", out.display()));
    Ok(())
}

fn robustness_reports(
    study: &LoadedStudy,
    settings: &RunSettings,
    baseline: &Arc<SyntheticControlFit>,
) -> Vec<RobustnessReport> {
    let cfg = &study.config.robustness;
    let (data, spec) = (&study.data, &study.spec);
    let mut reports = Vec::new();
    if cfg.leave_one_out {
        reports.extend(leave_one_out(data, spec, baseline, cfg.mode, &settings.opts));
    }
    let in_time = par::map(&cfg.in_time, |&t| {
        in_time_placebo(data, spec, baseline, t, &settings.opts)
            .unwrap_or_else(|e| RobustnessReport::infeasible(format!("in-time:{t}"), baseline, e.to_string()))
    });
    reports.extend(in_time);
    let pools = par::map(&cfg.pools, |pool| {
        restricted_pool(data, spec, baseline, &pool.keep, cfg.mode, &settings.opts, &pool.name)
            .unwrap_or_else(|e| RobustnessReport::infeasible(format!("pool:{}", pool.name), baseline, e.to_string()))
    });
    reports.extend(pools);
    rank_by_att_delta(&mut reports);
    reports
}

pub fn cmd_robustness(args: &CommonArgs, stdout: &mut dyn Write) -> Result<(), CliError> {
    let study = load_study(&args.config)?;
    let settings = run_settings(&study, args);
    let baseline = Arc::new(fit_study(&study, &settings)?);
    let reports = par::install(settings.jobs, || robustness_reports(&study, &settings, &baseline));
    let dir = settings.out.join("robustness");
    ensure_dir(&dir)?;
    output::write_weights(&dir.join("baseline_weights.csv"), &baseline)?;
    output::write_gaps(&dir.join("baseline_gaps.csv"), &baseline)?;
    for r in &reports {
        if let Some(fit) = &r.fit {
            let slug = output::slug(&r.label);
            output::write_gaps(&dir.join(format!("{slug}.csv")), fit)?;
            output::write_weights(&dir.join(format!("{slug}_weights.csv")), fit)?;
        }
    }
    output::write_ranking(&dir.join("ranking.csv"), &reports)?;
    say(stdout, format_args!("baseline att {}", baseline.att));
    for r in &reports {
        match (r.att_delta(), &r.infeasible) {
            (_, Some(why)) => say(stdout, format_args!("{}: infeasible ({why})", r.label)),
            (Some(d), None) => say(stdout, format_args!("{}: att delta {d}", r.label)),
            (None, None) => {}
        }
    }
    say(stdout, format_args!("wrote {}", dir.display()));
    Ok(())
}

#[derive(Serialize)]
struct GeneratedConfig<'a> {
    data: GeneratedData,
    run: GeneratedRun,
    study: &'a StudySpec,
}

#[derive(Serialize)]
struct GeneratedData {
    panels: Vec<String>,
}

#[derive(Serialize)]
struct GeneratedRun {
    seed: u64,
}

/// Writes `panel.csv` and a `study.toml` that fits it.
pub fn cmd_simulate(args: &CommonArgs, stdout: &mut dyn Write) -> Result<(), CliError> {
    let bytes = read_config_bytes(&args.config)?;
    let mut design: SimulationDesign = parse_toml(&args.config, &bytes)?;
    if let Some(seed) = args.seed {
        design.seed = seed;
    }
    let model = design.build().map_err(|e| CliError::Config(e.to_string()))?;
    let data = simulate_factor_model(&model).map_err(|e| CliError::Config(e.to_string()))?;
    let out = args
        .out
        .clone()
        .unwrap_or_else(|| args.config.parent().unwrap_or(Path::new(".")).join("out"));
    ensure_dir(&out)?;
    let panel_path = out.join("panel.csv");
    let file = fs::File::create(&panel_path).map_err(|e| CliError::Io(format!("{}: {e}", panel_path.display())))?;
    write_panel_csv(&data, std::io::BufWriter::new(file)).map_err(|e| CliError::Io(e.to_string()))?;

    let spec = design.default_study();
    let generated = GeneratedConfig {
        data: GeneratedData { panels: vec!["panel.csv".into()] },
        run: GeneratedRun { seed: design.seed },
        study: &spec,
    };
    let text = toml::to_string(&generated).map_err(|e| CliError::Config(e.to_string()))?;
    output::write_text(&out.join("study.toml"), &text)?;
    say(
        stdout,
        format_args!(
            "{} units x {} periods written to {}",
            data.units().len(),
            data.periods().len(),
            panel_path.display()
        ),
    );
    Ok(())
}
