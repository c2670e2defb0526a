//! Flat `key = value` experiment files.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;

use thiserror::Error;

use crate::dynamics::Method;
use crate::model::PotentialModel;
use crate::stats::uniform_edges;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("unknown key {key:?} on line {line}")]
    UnknownKey { line: usize, key: String },
    #[error("key {key:?} given twice (lines {first} and {second})")]
    Duplicate { key: String, first: usize, second: usize },
    #[error("missing required key {0:?}")]
    Missing(&'static str),
    #[error("{key}: {message}")]
    Invalid { key: &'static str, message: String },
}

const KEYS: [&str; 16] = [
    "model",
    "methods",
    "stepsizes",
    "gamma",
    "kBT",
    "t_total",
    "burn_in_fraction",
    "replicas",
    "seed",
    "stride",
    "bins.count",
    "bins.lo",
    "bins.hi",
    "h_ref",
    "checkpoints",
    "reference_replicas",
];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BinSpec {
    pub count: usize,
    pub lo: f64,
    pub hi: f64,
}

impl BinSpec {
    /// 20 bins on `[-3.5, 3.5]` for the oscillator, `[0.5, 2.5]` for Morse
    /// and `[0.5, 3.5]` for Lennard-Jones.
    pub fn default_for(model: &PotentialModel) -> Self {
        let (lo, hi) = match model {
            PotentialModel::Oscillator1D => (-3.5, 3.5),
            PotentialModel::MorseCluster { .. } => (0.5, 2.5),
            PotentialModel::LjCluster { .. } => (0.5, 3.5),
        };
        Self { count: 20, lo, hi }
    }
}

/// One experiment: every method at every stepsize and friction.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub model: PotentialModel,
    pub methods: Vec<Method>,
    pub stepsizes: Vec<f64>,
    pub gammas: Vec<f64>,
    pub kbt: f64,
    pub t_total: f64,
    pub burn_in_fraction: f64,
    pub replicas: u64,
    pub seed: u64,
    pub stride: u64,
    pub bins: BinSpec,
    pub h_ref: Option<f64>,
    /// Cumulative binned-sample counts at which a gamma sweep records errors.
    pub checkpoints: Vec<u64>,
    pub reference_replicas: Option<u64>,
}

pub fn parse_model(name: &str) -> Option<PotentialModel> {
    match name {
        "oscillator" => Some(PotentialModel::Oscillator1D),
        "morse" => Some(PotentialModel::morse()),
        "lj" => Some(PotentialModel::lennard_jones()),
        _ => None,
    }
}

fn invalid(key: &'static str, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        key,
        message: message.into(),
    }
}

fn scalar<T: FromStr>(key: &'static str, raw: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    raw.parse::<T>()
        .map_err(|e| invalid(key, format!("cannot parse {raw:?}: {e}")))
}

fn list<T: FromStr>(key: &'static str, raw: &str) -> Result<Vec<T>, ConfigError>
where
    T::Err: std::fmt::Display,
{
    raw.split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| scalar(key, t))
        .collect()
}

fn join<T: std::fmt::Display>(items: &[T]) -> String {
    items
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(", ")
}

impl ExperimentSpec {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut raw: BTreeMap<&'static str, (usize, String)> = BTreeMap::new();
        for (n, full) in text.lines().enumerate() {
            let line_no = n + 1;
            let line = full.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| ConfigError::Syntax {
                line: line_no,
                message: "expected `key = value`".into(),
            })?;
            let key = key.trim();
            let known = KEYS.iter().find(|k| **k == key).ok_or_else(|| ConfigError::UnknownKey {
                line: line_no,
                key: key.to_string(),
            })?;
            if let Some((first, _)) = raw.get(known) {
                return Err(ConfigError::Duplicate {
                    key: key.to_string(),
                    first: *first,
                    second: line_no,
                });
            }
            raw.insert(known, (line_no, value.trim().to_string()));
        }
        let get = |key: &'static str| raw.get(key).map(|(_, v)| v.as_str());
        let need = |key: &'static str| get(key).ok_or(ConfigError::Missing(key));

        let model_name = need("model")?;
        let model = parse_model(model_name)
            .ok_or_else(|| invalid("model", format!("unknown model {model_name:?} (oscillator, morse, lj)")))?;
        let methods = need("methods")?
            .split(',')
            .map(str::trim)
            .filter(|t| !t.is_empty())
            .map(|t| t.parse::<Method>().map_err(|e| invalid("methods", e.to_string())))
            .collect::<Result<Vec<_>, _>>()?;
        let defaults = BinSpec::default_for(&model);
        let bins = BinSpec {
            count: get("bins.count").map(|v| scalar("bins.count", v)).transpose()?.unwrap_or(defaults.count),
            lo: get("bins.lo").map(|v| scalar("bins.lo", v)).transpose()?.unwrap_or(defaults.lo),
            hi: get("bins.hi").map(|v| scalar("bins.hi", v)).transpose()?.unwrap_or(defaults.hi),
        };
        let spec = Self {
            model,
            methods,
            stepsizes: list("stepsizes", need("stepsizes")?)?,
            gammas: list("gamma", need("gamma")?)?,
            kbt: scalar("kBT", need("kBT")?)?,
            t_total: scalar("t_total", need("t_total")?)?,
            burn_in_fraction: get("burn_in_fraction")
                .map(|v| scalar("burn_in_fraction", v))
                .transpose()?
                .unwrap_or(0.1),
            replicas: scalar("replicas", need("replicas")?)?,
            seed: scalar("seed", need("seed")?)?,
            stride: get("stride").map(|v| scalar("stride", v)).transpose()?.unwrap_or(1),
            bins,
            h_ref: get("h_ref").map(|v| scalar("h_ref", v)).transpose()?,
            checkpoints: get("checkpoints").map(|v| list("checkpoints", v)).transpose()?.unwrap_or_default(),
            reference_replicas: get("reference_replicas")
                .map(|v| scalar("reference_replicas", v))
                .transpose()?,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let positive = |key: &'static str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(invalid(key, format!("{v} must be positive and finite")))
            }
        };
        if self.methods.is_empty() {
            return Err(invalid("methods", "at least one method is required"));
        }
        if self.stepsizes.is_empty() {
            return Err(invalid("stepsizes", "at least one stepsize is required"));
        }
        if self.gammas.is_empty() {
            return Err(invalid("gamma", "at least one value is required"));
        }
        for &h in &self.stepsizes {
            positive("stepsizes", h)?;
        }
        for &g in &self.gammas {
            positive("gamma", g)?;
        }
        positive("kBT", self.kbt)?;
        positive("t_total", self.t_total)?;
        if !(0.0..1.0).contains(&self.burn_in_fraction) {
            return Err(invalid("burn_in_fraction", "must lie in [0, 1)"));
        }
        if self.replicas == 0 {
            return Err(invalid("replicas", "must be at least 1"));
        }
        if self.stride == 0 {
            return Err(invalid("stride", "must be at least 1"));
        }
        if self.bins.count == 0 || uniform_edges(self.bins.lo, self.bins.hi, self.bins.count).is_err() {
            return Err(invalid("bins", "need bins.count ≥ 1 and bins.lo < bins.hi"));
        }
        if let Some(h) = self.h_ref {
            positive("h_ref", h)?;
        }
        if self.reference_replicas == Some(0) {
            return Err(invalid("reference_replicas", "must be at least 1"));
        }
        if self.checkpoints.windows(2).any(|w| w[0] > w[1]) {
            return Err(invalid("checkpoints", "must be nondecreasing"));
        }
        for &h in &self.stepsizes {
            let steps = (self.t_total / h).round();
            if steps < 1.0 {
                return Err(invalid("t_total", format!("no steps at stepsize {h}")));
            }
            let burn = (self.burn_in_fraction * steps).round();
            if burn >= steps {
                return Err(invalid("burn_in_fraction", format!("burn-in consumes every step at {h}")));
            }
            let samples = ((steps - burn) as u64) / self.stride;
            if let Some(&last) = self.checkpoints.last() {
                if last > samples {
                    return Err(invalid(
                        "checkpoints",
                        format!("{last} exceeds the {samples} samples available at stepsize {h}"),
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn edges(&self) -> Vec<f64> {
        uniform_edges(self.bins.lo, self.bins.hi, self.bins.count).expect("validated bin spec")
    }

    pub fn model_name(&self) -> &'static str {
        self.model.name()
    }

    pub fn smallest_stepsize(&self) -> f64 {
        self.stepsizes.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    /// Canonical text form; parses back to an equal spec.
    pub fn to_config_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "model = {}", self.model_name());
        let _ = writeln!(out, "methods = {}", join(&self.methods));
        let _ = writeln!(out, "stepsizes = {}", join(&self.stepsizes));
        let _ = writeln!(out, "gamma = {}", join(&self.gammas));
        let _ = writeln!(out, "kBT = {}", self.kbt);
        let _ = writeln!(out, "t_total = {}", self.t_total);
        let _ = writeln!(out, "burn_in_fraction = {}", self.burn_in_fraction);
        let _ = writeln!(out, "replicas = {}", self.replicas);
        let _ = writeln!(out, "seed = {}", self.seed);
        let _ = writeln!(out, "stride = {}", self.stride);
        let _ = writeln!(out, "bins.count = {}", self.bins.count);
        let _ = writeln!(out, "bins.lo = {}", self.bins.lo);
        let _ = writeln!(out, "bins.hi = {}", self.bins.hi);
        if let Some(h) = self.h_ref {
            let _ = writeln!(out, "h_ref = {h}");
        }
        if !self.checkpoints.is_empty() {
            let _ = writeln!(out, "checkpoints = {}", join(&self.checkpoints));
        }
        if let Some(r) = self.reference_replicas {
            let _ = writeln!(out, "reference_replicas = {r}");
        }
        out
    }
}
