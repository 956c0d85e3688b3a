use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::interval::{Clamp, DEFAULT_STABILITY_THRESHOLD};
use crate::synth::{BundleConfig, Regime, SynthConfig};
use crate::tuning::HyperGrid;
use crate::types::{Algorithm, PropertyKind, SeriesId};

/// Ordered `key = value` pairs. Blank lines and lines starting with `#` are
/// ignored; keys may appear once.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct KeyValues {
    path: PathBuf,
    entries: Vec<(String, String, usize)>,
}

impl KeyValues {
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut entries: Vec<(String, String, usize)> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let trimmed = raw.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let Some((key, value)) = trimmed.split_once('=') else {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line,
                    message: format!("expected `key = value`, found `{trimmed}`"),
                });
            };
            let (key, value) = (key.trim(), value.trim());
            if key.is_empty() {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line,
                    message: "empty key".into(),
                });
            }
            if let Some((_, _, first)) = entries.iter().find(|(k, _, _)| k == key) {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line,
                    message: format!("duplicate key `{key}` (first set on line {first})"),
                });
            }
            entries.push((key.to_string(), value.to_string(), line));
        }
        Ok(KeyValues {
            path: path.to_path_buf(),
            entries,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().find(|(k, _, _)| k == key).map(|(_, v, _)| v.as_str())
    }

    /// `(key, value, line)` in file order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &str, usize)> {
        self.entries.iter().map(|(k, v, l)| (k.as_str(), v.as_str(), *l))
    }

    fn error(&self, line: usize, message: impl Into<String>) -> Error {
        Error::Parse {
            path: self.path.clone(),
            line,
            message: message.into(),
        }
    }
}

/// Pair of data files for one series.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesEntry {
    pub id: SeriesId,
    pub observations: PathBuf,
    pub ensemble: PathBuf,
}

/// Dataset description: one block of `series.<NAME>.<field>` keys per
/// series, with fields `kind`, `well`, `units`, `observations` and
/// `ensemble`. Paths are relative to the manifest's directory.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Manifest {
    pub series: Vec<SeriesEntry>,
}

/// File name of the manifest inside a data directory.
pub const MANIFEST_FILE: &str = "manifest.txt";

impl Manifest {
    /// Accepts the manifest file itself or a directory holding
    /// [`MANIFEST_FILE`].
    pub fn load(path: &Path) -> Result<Self> {
        let file = if path.is_dir() { path.join(MANIFEST_FILE) } else { path.to_path_buf() };
        let kv = KeyValues::load(&file)?;
        let base = file.parent().map(Path::to_path_buf).unwrap_or_default();
        let mut names: Vec<(String, usize)> = Vec::new();
        for (key, _, line) in kv.iter() {
            let Some(rest) = key.strip_prefix("series.") else {
                return Err(kv.error(line, format!("unknown manifest key `{key}`")));
            };
            let Some((name, field)) = rest.rsplit_once('.') else {
                return Err(kv.error(line, format!("expected `series.<NAME>.<field>`, found `{key}`")));
            };
            if !["kind", "well", "units", "observations", "ensemble"].contains(&field) {
                return Err(kv.error(line, format!("unknown series field `{field}`")));
            }
            if !names.iter().any(|(n, _)| n == name) {
                names.push((name.to_string(), line));
            }
        }
        let mut series = Vec::with_capacity(names.len());
        for (name, line) in names {
            let field = |f: &str| {
                kv.get(&format!("series.{name}.{f}"))
                    .ok_or_else(|| kv.error(line, format!("series `{name}` lacks `{f}`")))
            };
            let kind: PropertyKind = field("kind")?.parse().map_err(|e: Error| kv.error(line, e.to_string()))?;
            let id = SeriesId::new(kind, field("well")?, field("units")?).map_err(|e| kv.error(line, e.to_string()))?;
            series.push(SeriesEntry {
                id,
                observations: base.join(field("observations")?),
                ensemble: base.join(field("ensemble")?),
            });
        }
        Ok(Manifest { series })
    }

    /// Manifest text with paths written as given.
    pub fn render(&self) -> String {
        let mut out = String::from("# series data files; paths are relative to this file\n");
        for e in &self.series {
            let name = e.id.name();
            out.push_str(&format!("series.{name}.kind = {}\n", e.id.kind.as_str()));
            out.push_str(&format!("series.{name}.well = {}\n", e.id.well));
            out.push_str(&format!("series.{name}.units = {}\n", e.id.units));
            out.push_str(&format!("series.{name}.observations = {}\n", e.observations.display()));
            out.push_str(&format!("series.{name}.ensemble = {}\n", e.ensemble.display()));
        }
        out
    }
}

/// How hyperparameters are set for one algorithm.
#[derive(Debug, Clone, PartialEq)]
pub enum HyperSetting {
    Fixed(f64),
    /// Grid override, or the algorithm's default grid when `None`.
    Adaptive(Option<HyperGrid>),
}

/// Settings shared by the commands. Built from a config file and/or
/// command-line flags through [`RunConfig::set`].
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    /// Manifest file or data directory.
    pub data: Option<PathBuf>,
    /// Series names to process; all when empty.
    pub series: Vec<String>,
    pub algorithms: Vec<Algorithm>,
    pub lambda: Option<f64>,
    pub eta: Option<f64>,
    pub grid: Option<HyperGrid>,
    pub burn_in: Option<usize>,
    /// Fraction of the steps used for learning in interval runs.
    pub split: f64,
    pub clamp: Option<Clamp>,
    pub stability_threshold: f64,
    /// Ridge comparator ball radius for the bound check.
    pub ball_radius: f64,
    pub out: PathBuf,
    /// Trace directory read by `evaluate`; defaults to `out`.
    pub traces: Option<PathBuf>,
    pub jobs: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            data: None,
            series: Vec::new(),
            algorithms: vec![Algorithm::Ewa],
            lambda: None,
            eta: None,
            grid: None,
            burn_in: None,
            split: 2.0 / 3.0,
            clamp: None,
            stability_threshold: DEFAULT_STABILITY_THRESHOLD,
            ball_radius: 1.0,
            out: PathBuf::from("out"),
            traces: None,
            jobs: None,
        }
    }
}

fn number<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::invalid("setting", format!("`{key}`: cannot parse `{value}`")))
}

fn pair(key: &str, value: &str) -> Result<(f64, f64)> {
    let (a, b) = value
        .split_once(':')
        .ok_or_else(|| Error::invalid("setting", format!("`{key}` expects `lo:hi`, found `{value}`")))?;
    Ok((number(key, a.trim())?, number(key, b.trim())?))
}

/// Parses `lo:hi:count` into a log-spaced grid.
pub fn parse_grid(value: &str) -> Result<HyperGrid> {
    let parts: Vec<&str> = value.split(':').map(str::trim).collect();
    if parts.len() != 3 {
        return Err(Error::invalid("setting", format!("`grid` expects `lo:hi:count`, found `{value}`")));
    }
    HyperGrid::log_spaced(number("grid", parts[0])?, number("grid", parts[1])?, number("grid", parts[2])?)
}

fn list(value: &str) -> impl Iterator<Item = &str> {
    value.split(',').map(str::trim).filter(|s| !s.is_empty())
}

impl RunConfig {
    /// Applies one setting. Keys: `data`, `series`, `algorithm`, `lambda`,
    /// `eta`, `grid`, `burn_in`, `split`, `clamp`, `stability_threshold`,
    /// `ball_radius`, `out`, `traces`, `jobs`.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "data" => self.data = Some(PathBuf::from(value)),
            "series" => self.series = list(value).map(str::to_string).collect(),
            "algorithm" => {
                self.algorithms = list(value).map(str::parse).collect::<Result<_>>()?;
                if self.algorithms.is_empty() {
                    return Err(Error::invalid("setting", "`algorithm` is empty"));
                }
            }
            "lambda" => self.lambda = Some(number(key, value)?),
            "eta" => self.eta = Some(number(key, value)?),
            "grid" => self.grid = Some(parse_grid(value)?),
            "burn_in" => self.burn_in = Some(number(key, value)?),
            "split" => {
                let split: f64 = number(key, value)?;
                if !(split > 0.0 && split < 1.0) {
                    return Err(Error::invalid("setting", format!("`split` must lie in (0, 1), found {split}")));
                }
                self.split = split;
            }
            "clamp" => {
                let (lo, hi) = pair(key, value)?;
                self.clamp = Some(Clamp::new(lo, hi)?);
            }
            "stability_threshold" => {
                let v: f64 = number(key, value)?;
                if !(v > 0.0) {
                    return Err(Error::invalid("setting", format!("`stability_threshold` must be positive, found {v}")));
                }
                self.stability_threshold = v;
            }
            "ball_radius" => {
                let v: f64 = number(key, value)?;
                if !(v >= 1.0) {
                    return Err(Error::invalid("setting", format!("`ball_radius` must be at least 1, found {v}")));
                }
                self.ball_radius = v;
            }
            "out" => self.out = PathBuf::from(value),
            "traces" => self.traces = Some(PathBuf::from(value)),
            "jobs" => {
                let jobs: usize = number(key, value)?;
                if jobs == 0 {
                    return Err(Error::invalid("setting", "`jobs` must be at least 1"));
                }
                self.jobs = Some(jobs);
            }
            _ => return Err(Error::invalid("setting", format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    /// Reads a config file. Relative `data`, `out` and `traces` paths are
    /// taken relative to the file.
    pub fn load(path: &Path) -> Result<Self> {
        let kv = KeyValues::load(path)?;
        let base = path.parent().unwrap_or(Path::new(""));
        let mut config = RunConfig::default();
        for (key, value, line) in kv.iter() {
            let value = match key {
                "data" | "out" | "traces" => base.join(value).to_string_lossy().into_owned(),
                _ => value.to_string(),
            };
            config.set(key, &value).map_err(|e| kv.error(line, e.to_string()))?;
        }
        Ok(config)
    }

    pub fn hyper_setting(&self, algorithm: Algorithm) -> HyperSetting {
        let fixed = match algorithm {
            Algorithm::Ewa => self.eta,
            Algorithm::Ridge | Algorithm::Lasso => self.lambda,
            Algorithm::Uniform => Some(0.0),
        };
        match fixed {
            Some(v) => HyperSetting::Fixed(v),
            None => HyperSetting::Adaptive(self.grid.clone()),
        }
    }

    pub fn data_path(&self) -> Result<&Path> {
        self.data
            .as_deref()
            .ok_or_else(|| Error::invalid("setting", "no data given (`data` key or --data)"))
    }

    pub fn traces_dir(&self) -> &Path {
        self.traces.as_deref().unwrap_or(&self.out)
    }
}

/// What `synth-gen` produces.
#[derive(Debug, Clone, PartialEq)]
pub enum SynthRequest {
    Series(SynthConfig),
    Bundle(BundleConfig),
}

impl SynthRequest {
    /// Settings: `bundle` (bool), `seed`, `regime`, `models`, `steps`,
    /// `series`, `noise`, `bias`, `spread`, `include_truth`.
    pub fn from_settings<'a>(settings: impl IntoIterator<Item = (&'a str, &'a str)>) -> Result<Self> {
        let mut bundle = false;
        let mut series = SynthConfig::new(0, Regime::SmoothPressure);
        let mut b = BundleConfig::default();
        let mut noise = None;
        let mut models = None;
        let mut steps = None;
        for (key, value) in settings {
            match key {
                "bundle" => bundle = number(key, value)?,
                "seed" => {
                    series.seed = number(key, value)?;
                    b.seed = series.seed;
                }
                "regime" => series.regime = value.parse()?,
                "models" => models = Some(number(key, value)?),
                "steps" => steps = Some(number(key, value)?),
                "series" => series.n_series = number(key, value)?,
                "noise" => noise = Some(number::<f64>(key, value)?),
                "bias" => series.ensemble_bias = number(key, value)?,
                "spread" => {
                    series.model_spread = number(key, value)?;
                    b.model_spread = series.model_spread;
                }
                "include_truth" => series.include_truth = number(key, value)?,
                _ => return Err(Error::invalid("synth setting", format!("unknown key `{key}`"))),
            }
        }
        if bundle {
            if let Some(m) = models {
                b.n_models = m;
            }
            if let Some(s) = steps {
                b.n_steps = s;
            }
            if let Some(n) = noise {
                b.noise_scale = n;
            }
            Ok(SynthRequest::Bundle(b))
        } else {
            if let Some(m) = models {
                series.n_models = m;
            }
            if let Some(s) = steps {
                series.n_steps = s;
            }
            if let Some(n) = noise {
                series.noise_sigma = n;
            }
            series.validate()?;
            Ok(SynthRequest::Series(series))
        }
    }
}
