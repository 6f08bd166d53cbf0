//! Resolved run configurations.
//!
//! Each subcommand starts from its defaults, overlays the optional `--config`
//! JSON object, then overlays the flags that were given. The merged object
//! is deserialized into a struct that denies unknown keys, and the resolved
//! struct is written back out with every default materialized, so it can be
//! fed to `--config` again unchanged.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use clusterfdr::permnull::{DEFAULT_ALPHA_FDR, DEFAULT_CDTS, DEFAULT_REALIZATIONS};
use clusterfdr::report::DEFAULT_ALPHA_RFT;
use clusterfdr::Connectivity;

#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        CliError {
            code: 2,
            message: message.into(),
        }
    }

    pub fn io(message: impl Into<String>) -> Self {
        CliError {
            code: 1,
            message: message.into(),
        }
    }
}

impl From<clusterfdr::Error> for CliError {
    fn from(e: clusterfdr::Error) -> Self {
        CliError {
            code: if e.is_io() { 1 } else { 2 },
            message: e.to_string(),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

/// Flag values collected as a JSON object; unset flags are left out.
#[derive(Default)]
pub struct Flags(Map<String, Value>);

impl Flags {
    pub fn set<T: Serialize>(&mut self, key: &str, value: Option<T>) -> &mut Self {
        if let Some(v) = value {
            self.0.insert(
                key.to_string(),
                serde_json::to_value(v).expect("flag values serialize"),
            );
        }
        self
    }
}

/// Subjects as written in a config: a directory or list file, or the
/// already-resolved ordered list of volume paths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SubjectsSpec {
    Files(Vec<PathBuf>),
    Source(PathBuf),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tail {
    Upper,
    Lower,
}

impl std::str::FromStr for Tail {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "upper" => Ok(Tail::Upper),
            "lower" => Ok(Tail::Lower),
            _ => Err(format!("tail must be `upper` or `lower`, got `{s}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TmapConfig {
    pub subjects: SubjectsSpec,
    pub mask: PathBuf,
    pub mask_threshold: f64,
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalyzeConfig {
    pub subjects: SubjectsSpec,
    pub mask: PathBuf,
    pub mask_threshold: f64,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub cdt: Vec<f64>,
    pub realizations: usize,
    pub alpha: f64,
    pub connectivity: Connectivity,
    pub tail: Tail,
    pub contrast_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompareConfig {
    pub published: PathBuf,
    pub analyzed: PathBuf,
    pub out_dir: PathBuf,
    pub alpha_rft: f64,
    pub alpha_fdr: f64,
    pub cdt_label: String,
}

/// Signal sphere as configured; missing fields get defaults at resolution.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SignalSpec {
    pub center: Option<[f64; 3]>,
    pub radius: Option<f64>,
    pub amplitude: Option<f64>,
}

pub const DEFAULT_SIGNAL_RADIUS: f64 = 3.0;
pub const DEFAULT_SIGNAL_AMPLITUDE: f64 = 1.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    pub seed: u64,
    pub out: PathBuf,
    pub trials: usize,
    pub dims: [usize; 3],
    pub subjects: usize,
    pub fwhm: f64,
    pub realizations: usize,
    pub cdt: f64,
    pub alpha: f64,
    pub connectivity: Connectivity,
    pub signal: Option<SignalSpec>,
    pub max_rejection_fraction: f64,
}

pub fn tmap_defaults() -> Value {
    serde_json::json!({ "mask_threshold": 0.0 })
}

pub fn analyze_defaults() -> Value {
    serde_json::json!({
        "mask_threshold": 0.0,
        "cdt": DEFAULT_CDTS,
        "realizations": DEFAULT_REALIZATIONS,
        "alpha": DEFAULT_ALPHA_FDR,
        "connectivity": Connectivity::default(),
        "tail": Tail::Upper,
        "contrast_id": "contrast",
    })
}

pub fn compare_defaults() -> Value {
    serde_json::json!({
        "alpha_rft": DEFAULT_ALPHA_RFT,
        "alpha_fdr": DEFAULT_ALPHA_FDR,
    })
}

pub fn simulate_defaults() -> Value {
    serde_json::json!({
        "out": "simulation_summary.json",
        "trials": 200,
        "dims": [20, 20, 20],
        "subjects": 20,
        "fwhm": 2.0,
        "realizations": 500,
        "cdt": 0.01,
        "alpha": DEFAULT_ALPHA_FDR,
        "connectivity": Connectivity::default(),
        "signal": null,
        "max_rejection_fraction": 0.10,
    })
}

fn read_config_object(path: &Path) -> CliResult<Map<String, Value>> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::io(format!("cannot read config {}: {e}", path.display())))?;
    match serde_json::from_str(&text) {
        Ok(Value::Object(m)) => Ok(m),
        Ok(_) => Err(CliError::usage(format!(
            "config {} must hold a JSON object",
            path.display()
        ))),
        Err(e) => Err(CliError::usage(format!("config {}: {e}", path.display()))),
    }
}

/// The merged object before deserialization, with `threads` split off since
/// it is an execution setting rather than part of the recorded config.
pub struct Merged {
    pub object: Map<String, Value>,
    pub threads: Option<usize>,
}

pub fn merge(defaults: Value, config: Option<&Path>, flags: Flags) -> CliResult<Merged> {
    let Value::Object(mut object) = defaults else {
        unreachable!("defaults are objects")
    };
    let mut threads = None;
    if let Some(path) = config {
        for (k, v) in read_config_object(path)? {
            object.insert(k, v);
        }
    }
    for (k, v) in flags.0 {
        object.insert(k, v);
    }
    if let Some(v) = object.remove("threads") {
        threads =
            Some(serde_json::from_value(v).map_err(|e| CliError::usage(format!("threads: {e}")))?);
    }
    Ok(Merged { object, threads })
}

impl Merged {
    pub fn require(&self, key: &str, why: &str) -> CliResult<()> {
        match self.object.get(key) {
            Some(v) if !v.is_null() => Ok(()),
            _ => Err(CliError::usage(format!(
                "missing --{}{why}",
                key.replace('_', "-")
            ))),
        }
    }

    pub fn resolve<T: DeserializeOwned>(self) -> CliResult<T> {
        serde_json::from_value(Value::Object(self.object))
            .map_err(|e| CliError::usage(format!("invalid configuration: {e}")))
    }
}

pub fn parse_triple<T: std::str::FromStr>(s: &str, what: &str) -> CliResult<[T; 3]> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    let bad = || {
        CliError::usage(format!(
            "{what} must be three comma-separated numbers, got `{s}`"
        ))
    };
    if parts.len() != 3 {
        return Err(bad());
    }
    let mut out = Vec::with_capacity(3);
    for p in parts {
        out.push(p.parse::<T>().map_err(|_| bad())?);
    }
    out.try_into().map_err(|_| bad())
}

pub fn parse_connectivity(s: &str) -> CliResult<Connectivity> {
    s.parse::<Connectivity>()
        .map_err(|e| CliError::usage(format!("--connectivity: {e}")))
}
