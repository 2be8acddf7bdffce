//! Configuration file and value resolution.
//!
//! Every parameter is resolved as command-line flag > config file > built-in
//! default. Each resolved value is logged to stderr and recorded in the
//! run's report.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

/// Error categories and their process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Kind {
    Other,
    Usage,
    Config,
    Input,
    Remote,
    Postcondition,
}

impl Kind {
    pub fn exit_code(self) -> i32 {
        match self {
            Kind::Other => 1,
            Kind::Usage => 2,
            Kind::Config => 3,
            Kind::Input => 4,
            Kind::Remote => 5,
            Kind::Postcondition => 6,
        }
    }
}

#[derive(Debug)]
pub struct Failure {
    pub kind: Kind,
    pub message: String,
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for Failure {}

pub fn fail(kind: Kind, message: impl Into<String>) -> anyhow::Error {
    Failure {
        kind,
        message: message.into(),
    }
    .into()
}

/// Tags an error with its exit category.
pub trait OrKind<T> {
    fn or_kind(self, kind: Kind) -> anyhow::Result<T>;
}

impl<T, E: fmt::Display> OrKind<T> for Result<T, E> {
    fn or_kind(self, kind: Kind) -> anyhow::Result<T> {
        self.map_err(|e| fail(kind, e.to_string()))
    }
}

/// Keys accepted in a `--config` TOML file.
#[derive(Debug, Default, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub model: Option<String>,
    pub input: Option<PathBuf>,
    pub text: Option<String>,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub alphabet: Option<String>,
    pub order: Option<usize>,
    pub alpha: Option<f64>,
    pub prior_mode: Option<String>,
    pub t_grid: Option<Vec<usize>>,
    pub samples: Option<usize>,
    pub max_length: Option<usize>,
    pub source: Option<String>,
    pub predictor: Option<String>,
    pub trials: Option<usize>,
    pub dataset: Option<PathBuf>,
    pub format: Option<String>,
    pub template: Option<PathBuf>,
    pub mode: Option<String>,
    pub k_total: Option<usize>,
    pub endpoint: Option<String>,
    pub protocol: Option<String>,
    pub examples: Option<PathBuf>,
    pub pool_cap: Option<usize>,
    pub test_cap: Option<usize>,
    pub test_fraction: Option<f64>,
}

impl FileConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| fail(Kind::Config, format!("{}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| fail(Kind::Config, format!("{}: {e}", path.display())))
    }
}

pub struct Resolver {
    resolved: BTreeMap<String, Value>,
}

impl Resolver {
    pub fn new() -> Self {
        Self {
            resolved: BTreeMap::new(),
        }
    }

    /// Picks the first of flag, file value and default, logging the choice.
    pub fn value<T: Serialize>(
        &mut self,
        key: &str,
        flag: Option<T>,
        file: Option<T>,
        default: Option<T>,
    ) -> Option<T> {
        let (value, origin) = match (flag, file, default) {
            (Some(v), _, _) => (Some(v), "flag"),
            (None, Some(v), _) => (Some(v), "config file"),
            (None, None, Some(v)) => (Some(v), "default"),
            (None, None, None) => (None, "unset"),
        };
        let json = value.as_ref().map_or(Value::Null, |v| {
            serde_json::to_value(v).expect("config values serialize")
        });
        eprintln!("ait: {key} = {json} ({origin})");
        self.resolved.insert(key.to_string(), json);
        value
    }

    pub fn with_default<T: Serialize>(&mut self, key: &str, flag: Option<T>, file: Option<T>, default: T) -> T {
        self.value(key, flag, file, Some(default)).expect("default supplied")
    }

    pub fn required<T: Serialize>(&mut self, key: &str, flag: Option<T>, file: Option<T>) -> anyhow::Result<T> {
        self.value(key, flag, file, None).ok_or_else(|| {
            fail(
                Kind::Config,
                format!("missing required setting `{key}` (flag --{})", key.replace('_', "-")),
            )
        })
    }

    /// Records a value that is not user-configurable but shapes the run.
    pub fn note<T: Serialize>(&mut self, key: &str, value: T) {
        self.resolved.insert(
            key.to_string(),
            serde_json::to_value(value).expect("config values serialize"),
        );
    }

    pub fn finish(self) -> BTreeMap<String, Value> {
        self.resolved
    }
}

pub fn parse_with<T>(
    kind: Kind,
    key: &str,
    raw: &str,
    parse: impl FnOnce(&str) -> Result<T, String>,
) -> anyhow::Result<T> {
    parse(raw).map_err(|e| fail(kind, format!("{key}: {e}")))
}
