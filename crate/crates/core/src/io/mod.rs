//! CSV data files, flat key-value configuration, and the command
//! implementations behind the `seqagg` binary.
//!
//! Observation files have the header `step,time_days,value`; ensemble files
//! `step,time_days,model_1,...,model_N`. Steps run `1..=T` without gaps.
//! Every number is written with 17 significant digits and every output file
//! is replaced atomically.

mod commands;
mod config;
mod files;

pub use commands::{
    cmd_evaluate, cmd_forecast_interval, cmd_forecast_online, cmd_synth, cmd_tune, cone_path, interval_path, trace_path, weights_path,
    BoundStatus, EvaluationRow, GridInfo, IntervalOutcome, OnlineOutcome, BOUND_CHECKS_FILE, GRIDS_FILE, INTERVAL_SUMMARY_FILE,
    RMSE_SUMMARY_FILE,
};
pub use config::{parse_grid, HyperSetting, KeyValues, Manifest, RunConfig, SeriesEntry, SynthRequest, MANIFEST_FILE};
pub use files::{
    format_float, load_csv, read_ensemble, read_observations, read_trace, write_atomic, write_ensemble, write_observations, write_table,
    write_trace, Loaded,
};
