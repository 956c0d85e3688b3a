use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::types::{AggregationTrace, Algorithm, EnsembleMatrix, ObservationSeries, SeriesId, StepRecord, WeightVector};

/// Full-precision decimal: 17 significant digits, which round-trips every
/// `f64`.
pub fn format_float(x: f64) -> String {
    format!("{x:.16e}")
}

/// Writes `bytes` to a temporary file next to `path`, then renames it over
/// `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

/// Builds a CSV table in memory and writes it atomically.
pub fn write_table<I, R>(path: &Path, header: &[String], rows: I) -> Result<()>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator<Item = String>,
{
    let mut out = csv::Writer::from_writer(Vec::new());
    let wrap = |e: csv::Error| Error::invalid("csv output", e.to_string());
    out.write_record(header).map_err(wrap)?;
    for row in rows {
        out.write_record(row).map_err(wrap)?;
    }
    let bytes = out.into_inner().map_err(|e| Error::invalid("csv output", e.to_string()))?;
    write_atomic(path, &bytes)
}

fn strings(items: &[&str]) -> Vec<String> {
    items.iter().map(|s| s.to_string()).collect()
}

fn model_columns(n: usize) -> impl Iterator<Item = String> {
    (1..=n).map(|j| format!("model_{j}"))
}

pub fn write_observations(path: &Path, obs: &ObservationSeries) -> Result<()> {
    let rows = obs
        .values()
        .iter()
        .zip(obs.step_times())
        .enumerate()
        .map(|(t, (&y, &time))| vec![(t + 1).to_string(), format_float(time), format_float(y)]);
    write_table(path, &strings(&["step", "time_days", "value"]), rows)
}

pub fn write_ensemble(path: &Path, ens: &EnsembleMatrix) -> Result<()> {
    let mut header = strings(&["step", "time_days"]);
    header.extend(model_columns(ens.n_models()));
    let rows = (0..ens.n_steps()).map(|t| {
        let mut row = vec![(t + 1).to_string(), format_float(ens.step_times()[t])];
        row.extend(ens.column(t).iter().map(|&v| format_float(v)));
        row
    });
    write_table(path, &header, rows)
}

/// Parsed contents of a data file, identified by its header.
#[derive(Debug, Clone, PartialEq)]
pub enum Loaded {
    Observations(ObservationSeries),
    Ensemble(EnsembleMatrix),
}

struct Table {
    path: PathBuf,
    header: Vec<String>,
    /// `(line, fields)` per data row.
    rows: Vec<(usize, Vec<String>)>,
}

impl Table {
    fn read(path: &Path) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .flexible(true)
            .comment(Some(b'#'))
            .from_path(path)
            .map_err(|e| match e.into_kind() {
                csv::ErrorKind::Io(io) => Error::io(path, io),
                other => Error::Parse {
                    path: path.to_path_buf(),
                    line: 1,
                    message: format!("{other:?}"),
                },
            })?;
        let parse_err = |line: usize, e: csv::Error| Error::Parse {
            path: path.to_path_buf(),
            line,
            message: e.to_string(),
        };
        let header: Vec<String> = reader.headers().map_err(|e| parse_err(1, e))?.iter().map(str::to_string).collect();
        let mut rows = Vec::new();
        for record in reader.records() {
            let record = record.map_err(|e| {
                let line = e.position().map_or(0, |p| p.line() as usize);
                parse_err(line, e)
            })?;
            let line = record.position().map_or(0, |p| p.line() as usize);
            rows.push((line, record.iter().map(str::to_string).collect()));
        }
        Ok(Table {
            path: path.to_path_buf(),
            header,
            rows,
        })
    }

    fn error(&self, line: usize, message: impl Into<String>) -> Error {
        Error::Parse {
            path: self.path.clone(),
            line,
            message: message.into(),
        }
    }

    fn expect_header(&self, expected: &[String]) -> Result<()> {
        if self.header != expected {
            return Err(self.error(1, format!("expected header `{}`, found `{}`", expected.join(","), self.header.join(","))));
        }
        Ok(())
    }

    fn number(&self, line: usize, field: &str, column: &str) -> Result<f64> {
        field
            .parse::<f64>()
            .map_err(|_| self.error(line, format!("column `{column}`: `{field}` is not a number")))
    }

    /// Checks widths and the contiguous `step` column; returns the numeric
    /// fields after `step`.
    fn numeric_rows(&self) -> Result<Vec<Vec<f64>>> {
        let width = self.header.len();
        let mut out = Vec::with_capacity(self.rows.len());
        for (expected, (line, fields)) in (1..).zip(&self.rows) {
            if fields.len() != width {
                return Err(self.error(*line, format!("expected {width} fields, found {}", fields.len())));
            }
            let step: usize = fields[0]
                .parse()
                .map_err(|_| self.error(*line, format!("column `step`: `{}` is not a step number", fields[0])))?;
            if step != expected {
                return Err(Error::NonContiguousSteps(expected));
            }
            let values = fields[1..]
                .iter()
                .zip(&self.header[1..])
                .map(|(f, c)| self.number(*line, f, c))
                .collect::<Result<Vec<f64>>>()?;
            out.push(values);
        }
        if out.is_empty() {
            return Err(self.error(1, "no data rows"));
        }
        Ok(out)
    }
}

/// Reads an observation or ensemble file, telling them apart by header.
pub fn load_csv(path: &Path, id: SeriesId) -> Result<Loaded> {
    let table = Table::read(path)?;
    if table.header.len() == 3 && table.header[2] == "value" {
        table.expect_header(&strings(&["step", "time_days", "value"]))?;
        let rows = table.numeric_rows()?;
        let times = rows.iter().map(|r| r[0]).collect();
        let values = rows.iter().map(|r| r[1]).collect();
        return Ok(Loaded::Observations(ObservationSeries::new(id, values, times)?));
    }
    let n = table.header.len().saturating_sub(2);
    let mut expected = strings(&["step", "time_days"]);
    expected.extend(model_columns(n.max(1)));
    table.expect_header(&expected)?;
    let rows = table.numeric_rows()?;
    let times = rows.iter().map(|r| r[0]).collect();
    let columns = rows.iter().flat_map(|r| r[1..].iter().copied()).collect();
    Ok(Loaded::Ensemble(EnsembleMatrix::from_columns(id, n, columns, times)?))
}

pub fn read_observations(path: &Path, id: SeriesId) -> Result<ObservationSeries> {
    match load_csv(path, id)? {
        Loaded::Observations(o) => Ok(o),
        Loaded::Ensemble(_) => Err(Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            message: "expected an observation file (`step,time_days,value`)".into(),
        }),
    }
}

pub fn read_ensemble(path: &Path, id: SeriesId) -> Result<EnsembleMatrix> {
    match load_csv(path, id)? {
        Loaded::Ensemble(e) => Ok(e),
        Loaded::Observations(_) => Err(Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            message: "expected an ensemble file (`step,time_days,model_1,...`)".into(),
        }),
    }
}

/// Trace file `step,forecast,observation,loss,hyperparameter` and the
/// companion weights file `step,model_1,...,model_N`.
pub fn write_trace(trace_path: &Path, weights_path: &Path, trace: &AggregationTrace) -> Result<()> {
    let rows = trace.records().iter().map(|r| {
        vec![
            (r.step + 1).to_string(),
            format_float(r.forecast),
            format_float(r.observation),
            format_float(r.loss),
            format_float(r.hyperparameter),
        ]
    });
    write_table(trace_path, &strings(&["step", "forecast", "observation", "loss", "hyperparameter"]), rows)?;
    let n = trace.records().first().map_or(0, |r| r.weights.len());
    let mut header = strings(&["step"]);
    header.extend(model_columns(n));
    let rows = trace.records().iter().map(|r| {
        let mut row = vec![(r.step + 1).to_string()];
        row.extend(r.weights.weights().iter().map(|&w| format_float(w)));
        row
    });
    write_table(weights_path, &header, rows)
}

/// Reads a trace written by [`write_trace`].
pub fn read_trace(trace_path: &Path, weights_path: &Path, algorithm: Algorithm) -> Result<AggregationTrace> {
    let table = Table::read(trace_path)?;
    table.expect_header(&strings(&["step", "forecast", "observation", "loss", "hyperparameter"]))?;
    let rows = table.numeric_rows()?;
    let weights_table = Table::read(weights_path)?;
    let n = weights_table.header.len().saturating_sub(1);
    let mut expected = strings(&["step"]);
    expected.extend(model_columns(n.max(1)));
    weights_table.expect_header(&expected)?;
    let weights = weights_table.numeric_rows()?;
    if weights.len() != rows.len() {
        return Err(weights_table.error(1, format!("{} weight rows for {} trace rows", weights.len(), rows.len())));
    }
    let mut trace = AggregationTrace::new();
    for (t, (r, w)) in rows.iter().zip(weights).enumerate() {
        let (forecast, observation, loss, hyperparameter) = (r[0], r[1], r[2], r[3]);
        let weights = WeightVector::new(w, algorithm.flavor(), algorithm, hyperparameter, t)
            .map_err(|e| weights_table.error(weights_table.rows[t].0, e.to_string()))?;
        trace
            .push(StepRecord {
                step: t,
                weights,
                forecast,
                observation,
                loss,
                hyperparameter,
            })
            .map_err(|e| table.error(table.rows[t].0, e.to_string()))?;
    }
    Ok(trace)
}
