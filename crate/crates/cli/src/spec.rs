//! Command-line and config-file parsing into a fully resolved
//! [`ExperimentSpec`].

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Experiment {
    Converge,
    TableA2,
    GradCheck,
    Theorems,
    TrainMlp,
    Bench,
}

impl Experiment {
    pub const ALL: [Experiment; 6] = [
        Experiment::Converge,
        Experiment::TableA2,
        Experiment::GradCheck,
        Experiment::Theorems,
        Experiment::TrainMlp,
        Experiment::Bench,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Experiment::Converge => "converge",
            Experiment::TableA2 => "table-a2",
            Experiment::GradCheck => "gradcheck",
            Experiment::Theorems => "theorems",
            Experiment::TrainMlp => "train-mlp",
            Experiment::Bench => "bench",
        }
    }

    /// Accepted parameter keys and their default values.
    pub fn defaults(self) -> &'static [(&'static str, &'static str)] {
        match self {
            Experiment::Converge => &[
                ("rows", "64"),
                ("cols", "256"),
                ("dist", "normal(3,1)"),
                ("T_max", "10"),
                ("seeds", "10"),
                ("variants", "basic,centered,compact,accelerated"),
            ],
            Experiment::TableA2 => &[
                ("rows", "64"),
                ("cols", "32"),
                ("dist", "normal(0,1)"),
                ("T", "30"),
                ("seeds", "10"),
                ("groups", "32,16"),
            ],
            Experiment::GradCheck => &[
                ("shapes", "5x7,7x5"),
                ("T", "0,1,3,5,10"),
                ("flags", "off-off,on-off,off-on,on-on"),
                ("h", "1e-5"),
                ("tol", "1e-5"),
                ("seeds", "1"),
            ],
            Experiment::Theorems => &[
                ("n", "16"),
                ("d", "16"),
                ("samples", "100000"),
                ("norm_tol", "1e-9"),
                ("moment_tol", "0.05"),
            ],
            Experiment::TrainMlp => &[
                ("depth", "6"),
                ("width", "64"),
                ("method", "oni"),
                ("scale", "1"),
                ("T", "5"),
                ("centering", "true"),
                ("compact_bound", "true"),
                ("group_size", "0"),
                ("gains", "false"),
                ("lr", "0.1"),
                ("momentum", "0.9"),
                ("weight_decay", "0"),
                ("batch_size", "256"),
                ("epochs", "10"),
                ("data", "synth"),
                ("classes", "10"),
                ("dim", "64"),
                ("n_per_class", "800"),
                ("test_per_class", "200"),
                ("separation", "3"),
                ("train_images", ""),
                ("train_labels", ""),
                ("test_images", ""),
                ("test_labels", ""),
                ("probe_batch", "256"),
            ],
            Experiment::Bench => &[("shapes", "256x2304,1024x1024"), ("T", "1,3,5,7"), ("repeats", "1")],
        }
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Experiment {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, CliError> {
        Experiment::ALL
            .into_iter()
            .find(|e| e.name() == s)
            .ok_or_else(|| CliError::BadSpec(format!("unknown experiment {s:?}")))
    }
}

/// A resolved run: every accepted key has a value.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub experiment: Experiment,
    pub params: BTreeMap<String, String>,
    pub out_dir: PathBuf,
    pub seed: u64,
}

impl ExperimentSpec {
    /// Defaults overlaid with `overrides`; unknown keys are rejected.
    pub fn new(
        experiment: Experiment,
        overrides: &[(&str, &str)],
        out_dir: impl Into<PathBuf>,
        seed: u64,
    ) -> Result<Self, CliError> {
        let mut params = defaults_map(experiment);
        for (k, v) in overrides {
            set_param(experiment, &mut params, k, v)?;
        }
        Ok(Self {
            experiment,
            params,
            out_dir: out_dir.into(),
            seed,
        })
    }

    pub fn get(&self, key: &str) -> &str {
        self.params
            .get(key)
            .map(String::as_str)
            .unwrap_or_else(|| panic!("{key} is not a parameter of {}", self.experiment))
    }

    pub fn parse<T: FromStr>(&self, key: &str) -> Result<T, CliError> {
        let raw = self.get(key);
        raw.parse()
            .map_err(|_| CliError::BadSpec(format!("cannot parse {key}={raw:?}")))
    }

    pub fn real(&self, key: &str) -> Result<f64, CliError> {
        parse_real(self.get(key)).ok_or_else(|| CliError::BadSpec(format!("cannot parse {key}={:?}", self.get(key))))
    }

    pub fn flag(&self, key: &str) -> Result<bool, CliError> {
        match self.get(key) {
            "true" | "1" | "on" | "yes" => Ok(true),
            "false" | "0" | "off" | "no" => Ok(false),
            other => Err(CliError::BadSpec(format!("{key} must be a boolean, got {other:?}"))),
        }
    }

    /// Comma-separated list.
    pub fn list<T: FromStr>(&self, key: &str) -> Result<Vec<T>, CliError> {
        self.get(key)
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse()
                    .map_err(|_| CliError::BadSpec(format!("cannot parse {s:?} in {key}")))
            })
            .collect()
    }

    /// Comma-separated `RxC` shapes.
    pub fn shapes(&self, key: &str) -> Result<Vec<(usize, usize)>, CliError> {
        self.get(key)
            .split(',')
            .map(|s| {
                let bad = || CliError::BadSpec(format!("bad shape {s:?} in {key}"));
                let (r, c) = s.trim().split_once('x').ok_or_else(bad)?;
                let r: usize = r.parse().map_err(|_| bad())?;
                let c: usize = c.parse().map_err(|_| bad())?;
                if r == 0 || c == 0 {
                    return Err(bad());
                }
                Ok((r, c))
            })
            .collect()
    }

    /// `normal(mean,std)`.
    pub fn normal(&self, key: &str) -> Result<(f64, f64), CliError> {
        let raw = self.get(key).replace(' ', "");
        let bad = || CliError::BadSpec(format!("{key} must look like normal(mean,std), got {raw:?}"));
        let inner = raw
            .strip_prefix("normal(")
            .and_then(|s| s.strip_suffix(')'))
            .ok_or_else(bad)?;
        let (m, s) = inner.split_once(',').ok_or_else(bad)?;
        let (m, s) = (parse_real(m).ok_or_else(bad)?, parse_real(s).ok_or_else(bad)?);
        if s.is_nan() || s < 0.0 {
            return Err(bad());
        }
        Ok((m, s))
    }
}

/// Reals, plus `sqrt2` for the isometry scale.
pub fn parse_real(s: &str) -> Option<f64> {
    match s.trim() {
        "sqrt2" | "sqrt(2)" => Some(std::f64::consts::SQRT_2),
        t => t.parse().ok().filter(|v: &f64| v.is_finite()),
    }
}

fn defaults_map(experiment: Experiment) -> BTreeMap<String, String> {
    experiment
        .defaults()
        .iter()
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect()
}

fn set_param(
    experiment: Experiment,
    params: &mut BTreeMap<String, String>,
    key: &str,
    value: &str,
) -> Result<(), CliError> {
    match params.get_mut(key) {
        Some(slot) => {
            *slot = value.to_string();
            Ok(())
        }
        None => Err(CliError::BadSpec(format!("unknown key {key:?} for {experiment}"))),
    }
}

/// Flat `key=value` lines; `#` starts a comment.
pub fn parse_config(text: &str) -> Result<Vec<(String, String)>, CliError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap().trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| CliError::BadSpec(format!("config line {} is not key=value", i + 1)))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

pub const USAGE: &str = "usage: oni <experiment> [--key value]... [--config path] [--out dir] [--seed N]
experiments: converge, table-a2, gradcheck, theorems, train-mlp, bench";

/// Parses `<experiment> [--key value | --key=value]...`. Flags override the
/// config file, which overrides the defaults.
pub fn parse_args<S: AsRef<str>>(args: &[S]) -> Result<ExperimentSpec, CliError> {
    let mut iter = args.iter().map(AsRef::as_ref);
    let name = iter.next().ok_or_else(|| CliError::BadSpec(USAGE.into()))?;
    let experiment: Experiment = name.parse()?;

    let mut flags = Vec::new();
    while let Some(arg) = iter.next() {
        let key = arg
            .strip_prefix("--")
            .ok_or_else(|| CliError::BadSpec(format!("expected --key, got {arg:?}")))?;
        let (key, value) = match key.split_once('=') {
            Some((k, v)) => (k.to_string(), v.to_string()),
            None => {
                let v = iter
                    .next()
                    .ok_or_else(|| CliError::BadSpec(format!("missing value for --{key}")))?;
                (key.to_string(), v.to_string())
            }
        };
        flags.push((key, value));
    }

    let mut merged: Vec<(String, String)> = Vec::new();
    if let Some((_, path)) = flags.iter().rev().find(|(k, _)| k == "config") {
        let text = std::fs::read_to_string(Path::new(path))
            .map_err(|e| CliError::Io(format!("reading config {path}: {e}")))?;
        merged.extend(parse_config(&text)?);
    }
    merged.extend(flags.into_iter().filter(|(k, _)| k != "config"));

    let mut params = defaults_map(experiment);
    let mut out_dir = PathBuf::from("out").join(experiment.name());
    let mut seed = 0u64;
    for (k, v) in merged {
        match k.as_str() {
            "out" => out_dir = PathBuf::from(v),
            "seed" => {
                seed = v
                    .parse()
                    .map_err(|_| CliError::BadSpec(format!("seed must be a nonnegative integer, got {v:?}")))?
            }
            _ => set_param(experiment, &mut params, &k, &v)?,
        }
    }
    Ok(ExperimentSpec {
        experiment,
        params,
        out_dir,
        seed,
    })
}
