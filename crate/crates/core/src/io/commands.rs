use std::path::{Path, PathBuf};

use super::config::{HyperSetting, Manifest, RunConfig, SeriesEntry, SynthRequest, MANIFEST_FILE};
use super::files::{format_float, read_ensemble, read_observations, read_trace, write_ensemble, write_observations, write_table, write_trace};
use crate::aggregators::{run_online, HyperMode};
use crate::error::{Error, Result};
use crate::eval::{check_ewa_bound, check_ridge_bound, default_burn_in, Baseline, BoundReport, RegretBoundParams, RmseReport};
use crate::interval::{
    build_cone, estimate_noise, ewa_interval_forecast, filter_models, initial_mismatch, ridge_interval_forecast, IntervalSeries,
    ScenarioCone, STABILITY_WINDOW,
};
use crate::par::{with_jobs, Parallelism};
use crate::synth::{generate, generate_bundle, SynthSeries};
use crate::tuning::HyperGrid;
use crate::types::{validate_pair, AggregationTrace, Algorithm, EnsembleMatrix, ObservationSeries, SeriesId};

/// Name of the RMSE table written by `forecast-online`.
pub const RMSE_SUMMARY_FILE: &str = "rmse_summary.csv";
pub const BOUND_CHECKS_FILE: &str = "bound_checks.csv";
pub const INTERVAL_SUMMARY_FILE: &str = "interval_summary.csv";
pub const GRIDS_FILE: &str = "grids.csv";

pub fn trace_path(dir: &Path, id: &SeriesId, algorithm: Algorithm) -> PathBuf {
    dir.join(format!("{}.{}.trace.csv", id.name(), algorithm))
}

pub fn weights_path(dir: &Path, id: &SeriesId, algorithm: Algorithm) -> PathBuf {
    dir.join(format!("{}.{}.weights.csv", id.name(), algorithm))
}

pub fn interval_path(dir: &Path, id: &SeriesId, algorithm: Algorithm) -> PathBuf {
    dir.join(format!("{}.{}.interval.csv", id.name(), algorithm))
}

pub fn cone_path(dir: &Path, id: &SeriesId) -> PathBuf {
    dir.join(format!("{}.cone.csv", id.name()))
}

fn selected_series(config: &RunConfig) -> Result<Vec<SeriesEntry>> {
    let manifest = Manifest::load(config.data_path()?)?;
    if config.series.is_empty() {
        return Ok(manifest.series);
    }
    config
        .series
        .iter()
        .map(|name| {
            manifest
                .series
                .iter()
                .find(|e| &e.id.name() == name)
                .cloned()
                .ok_or_else(|| Error::invalid("series selection", format!("`{name}` is not in the manifest")))
        })
        .collect()
}

fn load_pair(entry: &SeriesEntry) -> Result<(ObservationSeries, EnsembleMatrix)> {
    let obs = read_observations(&entry.observations, entry.id.clone())?;
    let ens = read_ensemble(&entry.ensemble, entry.id.clone())?;
    validate_pair(&obs, &ens)?;
    Ok((obs, ens))
}

/// Runs `f` over the selected series, spreading series over the pool.
/// Inner loops run sequentially when there is more than one series.
fn for_each_series<R, F>(config: &RunConfig, entries: &[SeriesEntry], f: F) -> Result<Vec<R>>
where
    R: Send,
    F: Fn(&SeriesEntry, Parallelism) -> Result<R> + Sync + Send,
{
    let inner = if entries.len() > 1 { Parallelism::Sequential } else { Parallelism::Parallel };
    with_jobs(config.jobs, || {
        Parallelism::Parallel.map(entries, |e| f(e, inner).map_err(|err| err.in_series(e.id.name())))
    })?
    .into_iter()
    .collect()
}

fn hyper_mode(config: &RunConfig, algorithm: Algorithm) -> Result<HyperMode> {
    Ok(match config.hyper_setting(algorithm) {
        HyperSetting::Fixed(v) => HyperMode::Fixed(v),
        HyperSetting::Adaptive(Some(grid)) => HyperMode::Adaptive(grid),
        HyperSetting::Adaptive(None) => HyperMode::Adaptive(HyperGrid::default_for(algorithm)?),
    })
}

fn create_out(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

#[derive(Debug, Clone, PartialEq)]
pub struct OnlineOutcome {
    /// One report per series and algorithm, in manifest then algorithm
    /// order.
    pub reports: Vec<RmseReport>,
    pub summary_path: PathBuf,
}

fn rmse_rows(reports: &[RmseReport]) -> (Vec<String>, Vec<Vec<String>>) {
    let header = [
        "series",
        "units",
        "algorithm",
        "burn_in",
        "rmse_algorithm",
        "rmse_best_model",
        "best_model",
        "rmse_best_convex",
        "ratio_to_best_convex",
        "ratio_to_best_model",
    ]
    .map(String::from)
    .to_vec();
    let rows = reports
        .iter()
        .map(|r| {
            vec![
                r.series.name(),
                r.series.units.clone(),
                r.algorithm.to_string(),
                r.burn_in.to_string(),
                format_float(r.rmse_algorithm),
                format_float(r.rmse_best_model),
                (r.best_model_index + 1).to_string(),
                format_float(r.rmse_best_convex),
                format_float(r.ratio_to_convex()),
                format_float(r.ratio_to_best_model()),
            ]
        })
        .collect();
    (header, rows)
}

/// One-step-ahead runs of every selected algorithm on every selected series.
///
/// Writes `<NAME>.<alg>.trace.csv`, `<NAME>.<alg>.weights.csv` and the
/// [`RMSE_SUMMARY_FILE`] table to `config.out`.
pub fn cmd_forecast_online(config: &RunConfig) -> Result<OnlineOutcome> {
    let entries = selected_series(config)?;
    create_out(&config.out)?;
    let per_series = for_each_series(config, &entries, |entry, inner| {
        let (obs, ens) = load_pair(entry)?;
        let burn_in = config.burn_in.unwrap_or_else(|| default_burn_in(obs.len()));
        let baseline = Baseline::new(obs.values(), &ens, burn_in)?;
        let mut reports = Vec::with_capacity(config.algorithms.len());
        for &algorithm in &config.algorithms {
            let trace = run_online(&obs, &ens, algorithm, &hyper_mode(config, algorithm)?, inner)?;
            write_trace(
                &trace_path(&config.out, &entry.id, algorithm),
                &weights_path(&config.out, &entry.id, algorithm),
                &trace,
            )?;
            reports.push(baseline.report(&trace, &obs, algorithm)?);
        }
        Ok(reports)
    })?;
    let reports: Vec<RmseReport> = per_series.into_iter().flatten().collect();
    let summary_path = config.out.join(RMSE_SUMMARY_FILE);
    let (header, rows) = rmse_rows(&reports);
    write_table(&summary_path, &header, rows)?;
    Ok(OnlineOutcome { reports, summary_path })
}

/// Interval forecast of one series, with what went into it.
#[derive(Debug, Clone, PartialEq)]
pub struct IntervalOutcome {
    pub series: SeriesId,
    pub learning_steps: usize,
    pub cone: ScenarioCone,
    pub intervals: IntervalSeries,
    /// 0-based models used; all of them for EWA.
    pub models_kept: Vec<usize>,
    /// Share of the observed prediction steps inside the interval.
    pub coverage: Option<f64>,
}

fn interval_algorithm(config: &RunConfig) -> Result<(Algorithm, f64)> {
    let [algorithm] = config.algorithms[..] else {
        return Err(Error::invalid("setting", "interval forecasts take exactly one algorithm"));
    };
    if !matches!(algorithm, Algorithm::Ewa | Algorithm::Ridge) {
        return Err(Error::UnsupportedAlgorithm(algorithm.to_string()));
    }
    match config.hyper_setting(algorithm) {
        HyperSetting::Fixed(v) => Ok((algorithm, v)),
        HyperSetting::Adaptive(_) => Err(Error::invalid(
            "setting",
            format!("interval forecasts need a fixed hyperparameter (`{}`)", if algorithm == Algorithm::Ewa { "eta" } else { "lambda" }),
        )),
    }
}

/// Interval forecasts for the prediction period of every selected series.
///
/// The first `floor(split * T)` steps are the learning part. Writes
/// `<NAME>.<alg>.interval.csv`, `<NAME>.cone.csv` and
/// [`INTERVAL_SUMMARY_FILE`].
pub fn cmd_forecast_interval(config: &RunConfig) -> Result<Vec<IntervalOutcome>> {
    let (algorithm, hyper) = interval_algorithm(config)?;
    let entries = selected_series(config)?;
    create_out(&config.out)?;
    let outcomes = for_each_series(config, &entries, |entry, inner| {
        let (obs, ens) = load_pair(entry)?;
        let total = ens.n_steps();
        let l = (config.split * total as f64).floor() as usize;
        if l == 0 || l >= total {
            return Err(Error::invalid("split", format!("{} leaves {l} learning steps out of {total}", config.split)));
        }
        let learning = &obs.values()[..l];
        let cone = build_cone(learning, &ens, config.clamp)?;
        let noise = estimate_noise(learning, config.stability_threshold, STABILITY_WINDOW)?;
        let observed_t = obs.len() > l;
        let (intervals, models_kept) = match algorithm {
            Algorithm::Ridge => {
                let filter = filter_models(learning, &ens)?;
                let kept = ens.select_models(&filter.kept)?;
                let shift = if observed_t {
                    let delta = initial_mismatch(&obs.values()[..=l], &kept, algorithm, hyper, 5.min(l + 1))?;
                    -delta.iter().sum::<f64>() / delta.len() as f64
                } else {
                    0.0
                };
                let series = ridge_interval_forecast(learning, &kept, &cone, hyper, noise.sigma_max, shift, inner)?;
                (series, filter.kept)
            }
            _ => {
                let shift = if observed_t {
                    -initial_mismatch(&obs.values()[..=l], &ens, algorithm, hyper, 1)?[0]
                } else {
                    0.0
                };
                let series = ewa_interval_forecast(learning, &ens, &cone, hyper, noise.sigma_max, shift)?;
                (series, (0..ens.n_models()).collect())
            }
        };
        let rows = intervals.steps.iter().map(|s| {
            vec![
                s.step.to_string(),
                format_float(s.lo),
                format_float(s.hi),
                format_float(s.center),
                format_float(s.sigma_applied),
                format_float(s.shift),
            ]
        });
        let header = ["step", "lo", "hi", "center", "sigma_applied", "shift"].map(String::from);
        write_table(&interval_path(&config.out, &entry.id, algorithm), &header, rows)?;
        let rows = cone
            .intervals()
            .iter()
            .enumerate()
            .map(|(k, &(a, b))| vec![(l + 1 + k).to_string(), format_float(a), format_float(b)]);
        write_table(&cone_path(&config.out, &entry.id), &["step", "cone_lo", "cone_hi"].map(String::from), rows)?;
        let evaluated: Vec<bool> = intervals
            .steps
            .iter()
            .filter(|s| s.step <= obs.len())
            .map(|s| {
                let y = obs.values()[s.step - 1];
                s.lo <= y && y <= s.hi
            })
            .collect();
        let coverage = (!evaluated.is_empty()).then(|| evaluated.iter().filter(|&&b| b).count() as f64 / evaluated.len() as f64);
        Ok(IntervalOutcome {
            series: entry.id.clone(),
            learning_steps: l,
            cone,
            intervals,
            models_kept,
            coverage,
        })
    })?;
    let header = [
        "series",
        "algorithm",
        "hyperparameter",
        "learning_steps",
        "sigma_max",
        "shift",
        "models_kept",
        "coverage",
    ]
    .map(String::from);
    let rows = outcomes.iter().map(|o| {
        vec![
            o.series.name(),
            o.intervals.algorithm.to_string(),
            format_float(o.intervals.hyperparameter),
            o.learning_steps.to_string(),
            format_float(o.intervals.sigma_max),
            format_float(o.intervals.shift),
            o.models_kept.len().to_string(),
            o.coverage.map_or_else(String::new, format_float),
        ]
    });
    write_table(&config.out.join(INTERVAL_SUMMARY_FILE), &header, rows)?;
    Ok(outcomes)
}

/// Outcome of one bound check.
#[derive(Debug, Clone, PartialEq)]
pub enum BoundStatus {
    Passed(BoundReport),
    Violated { lhs: f64, rhs: f64 },
    /// The check does not apply; the reason is kept for the table.
    Skipped(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationRow {
    pub series: SeriesId,
    pub algorithm: Algorithm,
    pub rmse: RmseReport,
    pub params: Option<RegretBoundParams>,
    pub bound: BoundStatus,
}

fn fixed_hyperparameter(trace: &AggregationTrace) -> Option<f64> {
    let first = trace.records().first()?.hyperparameter;
    trace.records().iter().all(|r| r.hyperparameter == first).then_some(first)
}

fn bound_check(trace: &AggregationTrace, ens: &EnsembleMatrix, algorithm: Algorithm, ball_radius: f64) -> Result<(Option<RegretBoundParams>, BoundStatus)> {
    if !matches!(algorithm, Algorithm::Ewa | Algorithm::Ridge) {
        return Ok((None, BoundStatus::Skipped("no bound for this algorithm".into())));
    }
    let Some(hyper) = fixed_hyperparameter(trace) else {
        return Ok((None, BoundStatus::Skipped("hyperparameter varies over the trace".into())));
    };
    let params = RegretBoundParams::from_data(trace, ens, hyper, ball_radius)?;
    let result = if algorithm == Algorithm::Ewa {
        let negative = trace.records().iter().any(|r| r.observation < 0.0) || (0..trace.len()).any(|t| ens.column(t).iter().any(|&m| m < 0.0));
        if negative {
            return Ok((Some(params), BoundStatus::Skipped("negative data".into())));
        }
        check_ewa_bound(trace, ens, &params)
    } else {
        check_ridge_bound(trace, ens, &params)
    };
    let status = match result {
        Ok(report) => BoundStatus::Passed(report),
        Err(Error::BoundViolated { lhs, rhs, .. }) => BoundStatus::Violated { lhs, rhs },
        Err(e) => return Err(e),
    };
    Ok((Some(params), status))
}

/// Re-evaluates traces written by `forecast-online`: RMSEs against the
/// data, and the regret bound of every fixed-hyperparameter EWA or Ridge
/// trace. Writes [`BOUND_CHECKS_FILE`] and [`RMSE_SUMMARY_FILE`] to
/// `config.out`, then fails with [`Error::BoundViolated`] if any check
/// failed.
pub fn cmd_evaluate(config: &RunConfig) -> Result<Vec<EvaluationRow>> {
    let entries = selected_series(config)?;
    let traces = config.traces_dir().to_path_buf();
    create_out(&config.out)?;
    let per_series = for_each_series(config, &entries, |entry, _| {
        let (obs, ens) = load_pair(entry)?;
        let burn_in = config.burn_in.unwrap_or_else(|| default_burn_in(obs.len()));
        let baseline = Baseline::new(obs.values(), &ens, burn_in)?;
        let mut rows = Vec::new();
        for &algorithm in &config.algorithms {
            let trace = read_trace(
                &trace_path(&traces, &entry.id, algorithm),
                &weights_path(&traces, &entry.id, algorithm),
                algorithm,
            )?;
            if trace.len() != obs.len() || trace.records().iter().zip(obs.values()).any(|(r, &y)| r.observation != y) {
                return Err(Error::invalid("trace", format!("{algorithm} trace observations differ from the data")));
            }
            let (params, bound) = bound_check(&trace, &ens, algorithm, config.ball_radius)?;
            rows.push(EvaluationRow {
                series: entry.id.clone(),
                algorithm,
                rmse: baseline.report(&trace, &obs, algorithm)?,
                params,
                bound,
            });
        }
        Ok(rows)
    })?;
    let rows: Vec<EvaluationRow> = per_series.into_iter().flatten().collect();

    let header = [
        "series",
        "algorithm",
        "hyperparameter",
        "b",
        "v",
        "t",
        "n",
        "lhs",
        "comparator",
        "epsilon",
        "rhs",
        "margin",
        "status",
    ]
    .map(String::from);
    let table = rows.iter().map(|r| {
        let p = r.params;
        let num = |f: Option<f64>| f.map_or_else(String::new, format_float);
        let mut row = vec![
            r.series.name(),
            r.algorithm.to_string(),
            num(p.map(|p| p.hyperparameter)),
            num(p.map(|p| p.b)),
            num(p.filter(|_| r.algorithm == Algorithm::Ridge).map(|p| p.v)),
            p.map_or_else(String::new, |p| p.t.to_string()),
            p.map_or_else(String::new, |p| p.n.to_string()),
        ];
        match &r.bound {
            BoundStatus::Passed(b) => {
                row.extend([b.lhs, b.comparator, b.epsilon, b.rhs, b.margin].map(format_float));
                row.push("pass".into());
            }
            BoundStatus::Violated { lhs, rhs } => {
                row.extend([format_float(*lhs), String::new(), String::new(), format_float(*rhs), format_float(rhs - lhs)]);
                row.push("violated".into());
            }
            BoundStatus::Skipped(why) => {
                row.extend(std::iter::repeat_n(String::new(), 5));
                row.push(format!("skipped: {why}"));
            }
        }
        row
    });
    write_table(&config.out.join(BOUND_CHECKS_FILE), &header, table)?;
    let reports: Vec<RmseReport> = rows.iter().map(|r| r.rmse.clone()).collect();
    let (header, table) = rmse_rows(&reports);
    write_table(&config.out.join(RMSE_SUMMARY_FILE), &header, table)?;

    if let Some((r, lhs, rhs)) = rows.iter().find_map(|r| match r.bound {
        BoundStatus::Violated { lhs, rhs } => Some((r, lhs, rhs)),
        _ => None,
    }) {
        return Err(Error::BoundViolated {
            algorithm: r.algorithm.as_str(),
            lhs,
            rhs,
        }
        .in_series(r.series.name()));
    }
    Ok(rows)
}

/// Grid used for one algorithm.
#[derive(Debug, Clone, PartialEq)]
pub struct GridInfo {
    pub algorithm: Algorithm,
    pub grid: HyperGrid,
}

/// Echoes the grids the selected algorithms would be tuned over. With data,
/// also runs the adaptive forecasters and writes
/// `<NAME>.<alg>.tuning.csv` (`step,hyperparameter,forecast,observation`).
pub fn cmd_tune(config: &RunConfig) -> Result<Vec<GridInfo>> {
    let grids = config
        .algorithms
        .iter()
        .filter(|&&a| a != Algorithm::Uniform)
        .map(|&algorithm| {
            let grid = match &config.grid {
                Some(g) => g.clone(),
                None => HyperGrid::default_for(algorithm)?,
            };
            Ok(GridInfo { algorithm, grid })
        })
        .collect::<Result<Vec<_>>>()?;
    create_out(&config.out)?;
    let header = ["algorithm", "lo", "hi", "count"].map(String::from);
    let rows = grids.iter().map(|g| {
        vec![
            g.algorithm.to_string(),
            format_float(g.grid.lo()),
            format_float(g.grid.hi()),
            g.grid.len().to_string(),
        ]
    });
    write_table(&config.out.join(GRIDS_FILE), &header, rows)?;
    if config.data.is_some() {
        let entries = selected_series(config)?;
        for_each_series(config, &entries, |entry, inner| {
            let (obs, ens) = load_pair(entry)?;
            for g in &grids {
                let trace = run_online(&obs, &ens, g.algorithm, &HyperMode::Adaptive(g.grid.clone()), inner)?;
                let rows = trace.records().iter().map(|r| {
                    vec![
                        (r.step + 1).to_string(),
                        format_float(r.hyperparameter),
                        format_float(r.forecast),
                        format_float(r.observation),
                    ]
                });
                let path = config.out.join(format!("{}.{}.tuning.csv", entry.id.name(), g.algorithm));
                write_table(&path, &["step", "hyperparameter", "forecast", "observation"].map(String::from), rows)?;
            }
            Ok(())
        })?;
    }
    Ok(grids)
}

/// Generates synthetic data into `out`: `<NAME>.obs.csv`, `<NAME>.ens.csv`
/// and a manifest.
pub fn cmd_synth(request: &SynthRequest, out: &Path, jobs: Option<usize>) -> Result<Manifest> {
    let series: Vec<SynthSeries> = with_jobs(jobs, || match request {
        SynthRequest::Series(c) => generate(c, Parallelism::Parallel),
        SynthRequest::Bundle(b) => generate_bundle(b, Parallelism::Parallel),
    })??;
    create_out(out)?;
    let mut manifest = Manifest::default();
    for s in &series {
        let id = s.observations.id().clone();
        let obs_name = format!("{}.obs.csv", id.name());
        let ens_name = format!("{}.ens.csv", id.name());
        write_observations(&out.join(&obs_name), &s.observations)?;
        write_ensemble(&out.join(&ens_name), &s.ensemble)?;
        manifest.series.push(SeriesEntry {
            id,
            observations: obs_name.into(),
            ensemble: ens_name.into(),
        });
    }
    super::files::write_atomic(&out.join(MANIFEST_FILE), manifest.render().as_bytes())?;
    Ok(manifest)
}
