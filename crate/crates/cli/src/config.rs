//! Flat `key = value` run configuration. `#` starts a comment; blank lines
//! are ignored; later assignments override earlier ones.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::str::FromStr;

use crate::error::{CliError, Stage};

/// Every key any command understands, with a one-line description.
pub const KEYS: &[(&str, &str)] = &[
    ("seed", "base seed for sampling, initialisation and data generation"),
    ("out", "output directory"),
    // gen-toy
    ("toy", "toy function: f1, f2 or both"),
    // sampling
    ("samples", "number of sampling points N"),
    ("sampling", "gaussian, uniform or dataset"),
    ("low", "lower bound of the uniform box"),
    ("high", "upper bound of the uniform box"),
    ("dataset", "matrix file whose columns are candidate sampling points"),
    // train-ref
    ("widths", "comma-separated layer widths, input first"),
    ("activations", "comma-separated activation per layer"),
    ("loss", "mse or softmax-ce"),
    ("steps", "gradient steps"),
    ("lr", "learning rate"),
    ("data", "training input matrix file, or 'blobs'"),
    ("targets", "labels file (softmax-ce) or matrix file (mse)"),
    ("classes", "blob class count"),
    ("per_class", "blob training points per class"),
    ("test_per_class", "blob held-out points per class"),
    ("separation", "blob centre norm"),
    ("spread", "blob standard deviation"),
    // compress
    ("reference", "network, toy or flexlayer file to compress"),
    ("subnet", "layer range a..b of the reference network"),
    ("method", "cmtf or ctd"),
    ("rank", "number of branches r"),
    ("basis", "pwl-max, pwl-minmax, pwl-negbranch or polynomial (or 1-4)"),
    ("degree", "basis order d"),
    ("lambda0", "initial coupling weight"),
    ("lambda_growth", "coupling weight growth factor"),
    ("growth_period", "iterations between growth events"),
    ("max_iters", "maximum solver iterations"),
    ("rel_tol", "relative objective change that stops the solver"),
    ("pinv_rel_tol", "relative singular value cut-off"),
    ("restarts", "independent restarts"),
    ("init", "random or relaxed-als"),
    ("init_sweeps", "unconstrained sweeps of the relaxed-als start"),
    ("freeze_knots", "keep first-iteration knots"),
    ("offset_correct", "apply offset correction after ctd"),
    ("finetune_steps", "gradient steps after the solve (0 disables)"),
    ("finetune_lr", "fine-tuning learning rate"),
    ("finetune_v", "also fine-tune V"),
    ("eval_data", "matrix file of held-out inputs to the full network"),
    ("labels", "labels file matching eval_data"),
    ("eval_samples", "held-out sample count when eval_data is absent"),
    // eval
    ("model", "flexlayer file to evaluate"),
    // sweep
    ("sweep_key", "rank, degree or basis"),
    ("sweep_values", "comma-separated values"),
];

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
}

fn config_err(msg: impl Into<String>) -> CliError {
    CliError::new(Stage::Config, msg)
}

pub fn normalize_key(key: &str) -> String {
    key.trim().replace('-', "_")
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut cfg = RunConfig::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                config_err(format!("line {}: expected 'key = value'", lineno + 1))
            })?;
            cfg.set(key, value.trim())?;
        }
        Ok(cfg)
    }

    /// Sets `key`, rejecting keys not in [`KEYS`].
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        let key = normalize_key(key);
        if !KEYS.iter().any(|(k, _)| *k == key) {
            return Err(config_err(format!("unknown key '{key}'")));
        }
        if value.is_empty() {
            return Err(config_err(format!("key '{key}' has an empty value")));
        }
        self.values.insert(key, value.to_string());
        Ok(())
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    pub fn has(&self, key: &str) -> bool {
        self.values.contains_key(key)
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>, CliError> {
        self.raw(key)
            .map(|v| {
                v.parse::<T>()
                    .map_err(|_| config_err(format!("invalid value '{v}' for '{key}'")))
            })
            .transpose()
    }

    pub fn get_or<T: FromStr>(&self, key: &str, default: T) -> Result<T, CliError> {
        Ok(self.get(key)?.unwrap_or(default))
    }

    pub fn require<T: FromStr>(&self, key: &str) -> Result<T, CliError> {
        self.get(key)?
            .ok_or_else(|| config_err(format!("missing required key '{key}'")))
    }

    pub fn path(&self, key: &str) -> Option<PathBuf> {
        self.raw(key).map(PathBuf::from)
    }

    pub fn require_path(&self, key: &str) -> Result<PathBuf, CliError> {
        self.path(key)
            .ok_or_else(|| config_err(format!("missing required key '{key}'")))
    }

    pub fn get_bool(&self, key: &str, default: bool) -> Result<bool, CliError> {
        match self.raw(key) {
            None => Ok(default),
            Some("true" | "yes" | "1") => Ok(true),
            Some("false" | "no" | "0") => Ok(false),
            Some(v) => Err(config_err(format!("invalid boolean '{v}' for '{key}'"))),
        }
    }

    /// Comma-separated list; empty entries are rejected.
    pub fn get_list<T: FromStr>(&self, key: &str) -> Result<Option<Vec<T>>, CliError> {
        let Some(raw) = self.raw(key) else {
            return Ok(None);
        };
        raw.split(',')
            .map(|item| {
                let item = item.trim();
                item.parse::<T>()
                    .map_err(|_| config_err(format!("invalid entry '{item}' in '{key}'")))
            })
            .collect::<Result<Vec<_>, _>>()
            .map(Some)
    }
}
