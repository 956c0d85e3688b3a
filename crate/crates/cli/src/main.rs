use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use seqagg::io::{
    cmd_evaluate, cmd_forecast_interval, cmd_forecast_online, cmd_synth, cmd_tune, format_float, BoundStatus, KeyValues, RunConfig,
    SynthRequest,
};
use seqagg::Error;

/// Sequential aggregation of ensemble forecasts.
#[derive(Debug, Parser)]
#[command(name = "seqagg", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// One-step-ahead forecasts, traces and an RMSE table.
    ForecastOnline(RunArgs),
    /// Interval forecasts over the prediction period.
    ForecastInterval(RunArgs),
    /// Re-check traces: RMSEs and regret bounds. Exits with status 2 on a
    /// bound violation.
    Evaluate(RunArgs),
    /// Print the tuning grids; with --data, also run the adaptive tuner.
    Tune(RunArgs),
    /// Generate synthetic data files and a manifest.
    SynthGen(SynthArgs),
}

#[derive(Debug, Args)]
struct RunArgs {
    /// Flat `key = value` file; flags given here override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Manifest file or directory containing `manifest.txt`.
    #[arg(long)]
    data: Option<String>,
    /// Comma-separated series names, e.g. BHP_P1,QO_P3.
    #[arg(long)]
    series: Option<String>,
    /// Comma-separated list of ewa, ridge, lasso, uniform.
    #[arg(long)]
    algorithm: Option<String>,
    /// Fixed regularization factor for ridge and lasso.
    #[arg(long)]
    lambda: Option<String>,
    /// Fixed learning rate for ewa.
    #[arg(long)]
    eta: Option<String>,
    /// Log-spaced tuning grid `lo:hi:count`.
    #[arg(long)]
    grid: Option<String>,
    #[arg(long)]
    burn_in: Option<String>,
    /// Learning fraction for interval forecasts.
    #[arg(long)]
    split: Option<String>,
    /// Clamp for cone intervals, `lo:hi`.
    #[arg(long)]
    clamp: Option<String>,
    #[arg(long)]
    stability_threshold: Option<String>,
    /// Ridge comparator ball radius for `evaluate`.
    #[arg(long)]
    ball_radius: Option<String>,
    /// Directory with traces for `evaluate` (defaults to --out).
    #[arg(long)]
    traces: Option<String>,
    #[arg(long)]
    jobs: Option<String>,
    #[arg(long)]
    out: Option<String>,
}

impl RunArgs {
    fn into_config(self) -> Result<RunConfig> {
        let mut config = match &self.config {
            Some(path) => RunConfig::load(path).with_context(|| format!("reading {}", path.display()))?,
            None => RunConfig::default(),
        };
        let flags = [
            ("data", self.data),
            ("series", self.series),
            ("algorithm", self.algorithm),
            ("lambda", self.lambda),
            ("eta", self.eta),
            ("grid", self.grid),
            ("burn_in", self.burn_in),
            ("split", self.split),
            ("clamp", self.clamp),
            ("stability_threshold", self.stability_threshold),
            ("ball_radius", self.ball_radius),
            ("traces", self.traces),
            ("jobs", self.jobs),
            ("out", self.out),
        ];
        for (key, value) in flags {
            if let Some(v) = value {
                config.set(key, &v).with_context(|| format!("--{}", key.replace('_', "-")))?;
            }
        }
        Ok(config)
    }
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// Flat `key = value` file with synth settings; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Generate the 70-series field bundle instead of one regime.
    #[arg(long)]
    bundle: bool,
    #[arg(long)]
    seed: Option<String>,
    /// smooth_pressure, rate_with_breakthrough or rate_with_shutin.
    #[arg(long)]
    regime: Option<String>,
    #[arg(long)]
    models: Option<String>,
    #[arg(long)]
    steps: Option<String>,
    #[arg(long)]
    series: Option<String>,
    /// Observation noise (bundle: multiplier of the per-regime levels).
    #[arg(long)]
    noise: Option<String>,
    #[arg(long)]
    bias: Option<String>,
    #[arg(long)]
    spread: Option<String>,
    /// Make model 1 the exact truth.
    #[arg(long)]
    include_truth: bool,
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

fn synth(args: SynthArgs) -> Result<()> {
    let file = match &args.config {
        Some(path) => KeyValues::load(path).with_context(|| format!("reading {}", path.display()))?,
        None => KeyValues::default(),
    };
    let mut settings: Vec<(String, String)> = file.iter().map(|(k, v, _)| (k.to_string(), v.to_string())).collect();
    let mut put = |key: &str, value: Option<String>| {
        if let Some(v) = value {
            settings.retain(|(k, _)| k != key);
            settings.push((key.to_string(), v));
        }
    };
    put("bundle", args.bundle.then(|| "true".into()));
    put("seed", args.seed);
    put("regime", args.regime);
    put("models", args.models);
    put("steps", args.steps);
    put("series", args.series);
    put("noise", args.noise);
    put("bias", args.bias);
    put("spread", args.spread);
    put("include_truth", args.include_truth.then(|| "true".into()));
    let request = SynthRequest::from_settings(settings.iter().map(|(k, v)| (k.as_str(), v.as_str())))?;
    let manifest = cmd_synth(&request, &args.out, args.jobs)?;
    println!("wrote {} series to {}", manifest.series.len(), args.out.display());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::ForecastOnline(args) => {
            let outcome = cmd_forecast_online(&args.into_config()?)?;
            println!("series,algorithm,rmse_algorithm,rmse_best_model,rmse_best_convex");
            for r in &outcome.reports {
                println!(
                    "{},{},{},{},{}",
                    r.series.name(),
                    r.algorithm,
                    format_float(r.rmse_algorithm),
                    format_float(r.rmse_best_model),
                    format_float(r.rmse_best_convex)
                );
            }
            eprintln!("summary: {}", outcome.summary_path.display());
        }
        Command::ForecastInterval(args) => {
            let config = args.into_config()?;
            for o in cmd_forecast_interval(&config)? {
                println!(
                    "{},{},steps {}..{},sigma_max {},shift {}",
                    o.series.name(),
                    o.intervals.algorithm,
                    o.learning_steps + 1,
                    o.learning_steps + o.intervals.steps.len(),
                    format_float(o.intervals.sigma_max),
                    format_float(o.intervals.shift)
                );
            }
            eprintln!("intervals written to {}", config.out.display());
        }
        Command::Evaluate(args) => {
            let rows = cmd_evaluate(&args.into_config()?)?;
            for r in rows {
                let status = match r.bound {
                    BoundStatus::Passed(b) => format!("pass (margin {})", format_float(b.margin)),
                    BoundStatus::Violated { .. } => "violated".into(),
                    BoundStatus::Skipped(why) => format!("skipped: {why}"),
                };
                println!("{},{},rmse {},{}", r.series.name(), r.algorithm, format_float(r.rmse.rmse_algorithm), status);
            }
        }
        Command::Tune(args) => {
            println!("algorithm,lo,hi,count");
            for g in cmd_tune(&args.into_config()?)? {
                println!("{},{},{},{}", g.algorithm, format_float(g.grid.lo()), format_float(g.grid.hi()), g.grid.len());
            }
        }
        Command::SynthGen(args) => synth(args)?,
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            let violated = err
                .downcast_ref::<Error>()
                .is_some_and(|e| matches!(e.root(), Error::BoundViolated { .. }));
            ExitCode::from(if violated { 2 } else { 1 })
        }
    }
}
