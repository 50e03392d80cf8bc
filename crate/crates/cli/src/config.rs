use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::CliError;

/// One experiment invocation, as read from JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: String,
    pub system: String,
    #[serde(default)]
    pub parameters: BTreeMap<String, Value>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.check_parameters()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    fn check_parameters(&self) -> Result<(), CliError> {
        for (k, v) in &self.parameters {
            if !(v.is_number() || v.is_string()) {
                return Err(CliError::Config(format!("parameter `{k}` must be a number or a string")));
            }
        }
        Ok(())
    }

    /// Applies a `key=value` override. Top-level fields are addressed by
    /// name, anything else lands in `parameters`.
    pub fn apply_override(&mut self, spec: &str) -> Result<(), CliError> {
        let (key, raw) = spec
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("override `{spec}` is not of the form key=value")))?;
        let key = key.trim();
        match key {
            "experiment" => self.experiment = raw.to_string(),
            "system" => self.system = raw.to_string(),
            "output_dir" => self.output_dir = Some(PathBuf::from(raw)),
            "seed" => self.seed = raw.parse().map_err(|_| CliError::Config(format!("seed `{raw}` is not an unsigned integer")))?,
            _ => {
                let key = key.strip_prefix("parameters.").unwrap_or(key);
                let value = match serde_json::from_str::<Value>(raw) {
                    Ok(v) if v.is_number() => v,
                    _ => Value::String(raw.to_string()),
                };
                self.parameters.insert(key.to_string(), value);
            }
        }
        Ok(())
    }
}

/// Typed access to the flat parameter map; records the effective values.
#[derive(Debug)]
pub struct Params {
    given: BTreeMap<String, Value>,
    effective: BTreeMap<String, Value>,
}

impl Params {
    /// Rejects keys outside `allowed`.
    pub fn new(given: &BTreeMap<String, Value>, allowed: &[&str]) -> Result<Self, CliError> {
        let allowed: BTreeSet<&str> = allowed.iter().copied().collect();
        let unknown: Vec<&String> = given.keys().filter(|k| !allowed.contains(k.as_str())).collect();
        if !unknown.is_empty() {
            let list: Vec<&str> = allowed.into_iter().collect();
            return Err(CliError::UnknownName(format!(
                "unknown parameter(s) {:?}; accepted: {}",
                unknown,
                list.join(", ")
            )));
        }
        Ok(Self {
            given: given.clone(),
            effective: BTreeMap::new(),
        })
    }

    pub fn f64(&mut self, key: &str, default: f64) -> Result<f64, CliError> {
        let v = match self.given.get(key) {
            None => default,
            Some(Value::Number(n)) => n.as_f64().unwrap_or(default),
            Some(Value::String(s)) => s.trim().parse().map_err(|_| CliError::Config(format!("parameter `{key}`: `{s}` is not a number")))?,
            Some(other) => return Err(CliError::Config(format!("parameter `{key}`: unsupported value {other}"))),
        };
        if !v.is_finite() {
            return Err(CliError::Config(format!("parameter `{key}` must be finite")));
        }
        self.effective.insert(key.to_string(), serde_json::json!(v));
        Ok(v)
    }

    pub fn usize(&mut self, key: &str, default: usize) -> Result<usize, CliError> {
        let v = self.f64(key, default as f64)?;
        if v < 0.0 || v.fract() != 0.0 {
            return Err(CliError::Config(format!("parameter `{key}` must be a nonnegative integer, got {v}")));
        }
        self.effective.insert(key.to_string(), serde_json::json!(v as u64));
        Ok(v as usize)
    }

    pub fn string(&mut self, key: &str, default: &str) -> Result<String, CliError> {
        let v = match self.given.get(key) {
            None => default.to_string(),
            Some(Value::String(s)) => s.clone(),
            Some(other) => other.to_string(),
        };
        self.effective.insert(key.to_string(), Value::String(v.clone()));
        Ok(v)
    }

    /// Comma-separated list of numbers, e.g. `"1.0,-0.5"`.
    pub fn vector(&mut self, key: &str, default: &[f64]) -> Result<Vec<f64>, CliError> {
        let fallback: Vec<String> = default.iter().map(|x| x.to_string()).collect();
        let raw = self.string(key, &fallback.join(","))?;
        raw.split(',')
            .map(|s| s.trim().parse::<f64>().map_err(|_| CliError::Config(format!("parameter `{key}`: `{s}` is not a number"))))
            .collect()
    }

    pub fn effective(&self) -> &BTreeMap<String, Value> {
        &self.effective
    }
}
