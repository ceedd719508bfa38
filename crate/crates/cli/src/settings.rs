//! Flat `key=value` config files and flag resolution.
//!
//! A value given on the command line wins over the config file, which wins
//! over the built-in default. Keys use the long flag names; `_` and `-` are
//! interchangeable.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::Failure;

pub const KNOWN_KEYS: &[&str] = &[
    "seed",
    "threads",
    "k",
    "sigma",
    "dt",
    "gamma",
    "lambda",
    "max-iter",
    "grad-tol",
    "lbfgs-memory",
    "als-iters",
    "als-tol",
    "train-fraction",
    "no-align",
    "min-ratings",
    "delimiter",
    "date-format",
    "rating-columns",
    "trust-columns",
    "skip-header",
    "ks",
    "lambdas",
    "users",
    "items",
    "bins",
    "ratings-per-bin",
    "trust-edges",
    "eta",
    "noise-std",
    "init-std",
    "velocity-std",
    "velocity-noise-std",
    "position-noise-std",
    "step",
    "tol",
    "bin",
    "threshold",
    "sample",
    "dynamic-only",
];

#[derive(Debug, Default)]
pub struct Settings {
    values: BTreeMap<String, String>,
}

fn normalize(key: &str) -> String {
    key.trim().replace('_', "-")
}

impl Settings {
    pub fn load(path: Option<&Path>) -> Result<Self, Failure> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = fs::read_to_string(path).map_err(|e| Failure::input(format!("{}: {e}", path.display())))?;
        Self::parse(&text, path)
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self, Failure> {
        let mut values = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let bad = |msg: &str| Failure::input(format!("{}:{}: {msg}", path.display(), i + 1));
            let (key, value) = line.split_once('=').ok_or_else(|| bad("expected key=value"))?;
            let key = normalize(key);
            if !KNOWN_KEYS.contains(&key.as_str()) {
                return Err(bad(&format!("unknown key `{key}`")));
            }
            values.insert(key, value.trim().to_string());
        }
        Ok(Self { values })
    }

    fn file_value<T: FromStr>(&self, key: &str) -> Result<Option<T>, Failure>
    where
        T::Err: Display,
    {
        match self.values.get(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|e| Failure::input(format!("config key `{key}`: cannot parse `{v}`: {e}"))),
        }
    }

    /// Flag, else config file, else `default`.
    pub fn pick<T: FromStr>(&self, flag: Option<T>, key: &str, default: T) -> Result<T, Failure>
    where
        T::Err: Display,
    {
        debug_assert!(KNOWN_KEYS.contains(&key), "{key}");
        match flag {
            Some(v) => Ok(v),
            None => Ok(self.file_value(key)?.unwrap_or(default)),
        }
    }

    pub fn pick_opt<T: FromStr>(&self, flag: Option<T>, key: &str) -> Result<Option<T>, Failure>
    where
        T::Err: Display,
    {
        match flag {
            Some(v) => Ok(Some(v)),
            None => self.file_value(key),
        }
    }

    /// A switch is on if given on the command line or set true in the file.
    pub fn switch(&self, flag: bool, key: &str) -> Result<bool, Failure> {
        self.pick(flag.then_some(true), key, false)
    }
}

/// Parses `a,b,c`.
pub fn parse_list<T: FromStr>(text: &str, what: &str) -> Result<Vec<T>, Failure>
where
    T::Err: Display,
{
    text.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse().map_err(|e| Failure::input(format!("{what}: cannot parse `{s}`: {e}"))))
        .collect()
}
