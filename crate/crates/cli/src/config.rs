//! `key = value` configuration files and precedence resolution.
//!
//! Flags override the file; for the seed the `HAZDIFF_SEED` environment
//! variable is consulted last.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use crate::CliError;

pub const SEED_ENV: &str = "HAZDIFF_SEED";

const KEYS: &[&str] = &[
    "method",
    "folds",
    "cv_folds",
    "inner_cv_folds",
    "n_lambdas",
    "lambda_min_ratio",
    "seed",
    "tau",
    "workers",
    "standardize",
    "fixed_baseline",
    "hdi_cofit",
    "scenario",
    "sb",
    "sg",
    "n",
    "p",
    "reps",
    "pilot_size",
];

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FileConfig {
    entries: BTreeMap<String, String>,
}

impl FileConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut entries = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(CliError::Data(format!("config line {}: expected key = value", lineno + 1)));
            };
            let key = k.trim().replace('-', "_");
            if !KEYS.contains(&key.as_str()) {
                return Err(CliError::Data(format!("config line {}: unknown key `{key}`", lineno + 1)));
            }
            entries.insert(key, v.trim().to_string());
        }
        Ok(Self { entries })
    }

    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::Data(format!("cannot read config {}: {e}", p.display())))?;
                Self::parse(&text)
            }
        }
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>, CliError> {
        self.raw(key)
            .map(|v| {
                v.parse::<T>()
                    .map_err(|_| CliError::Data(format!("config key `{key}`: cannot parse `{v}`")))
            })
            .transpose()
    }

    /// The flag when given, else the file's value.
    pub fn pick<T: FromStr>(&self, flag: Option<T>, key: &str) -> Result<Option<T>, CliError> {
        match flag {
            Some(v) => Ok(Some(v)),
            None => self.get(key),
        }
    }

    /// Flag, then file, then `HAZDIFF_SEED`.
    pub fn seed(&self, flag: Option<u64>) -> Result<Option<u64>, CliError> {
        if let Some(s) = self.pick(flag, "seed")? {
            return Ok(Some(s));
        }
        match std::env::var(SEED_ENV) {
            Ok(v) => v
                .trim()
                .parse()
                .map(Some)
                .map_err(|_| CliError::Data(format!("{SEED_ENV}: cannot parse `{v}`"))),
            Err(_) => Ok(None),
        }
    }
}
