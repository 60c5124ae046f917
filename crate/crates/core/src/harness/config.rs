//! Run configuration: the documented key schema, file parsing (JSON or
//! key=value lines), and command-line override merging.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{ParkError, Result};
use crate::harness::data::Task;
use crate::harness::metrics::Metric;
use crate::kernel::KernelFamily;

/// Estimator selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    /// Feature-space partition with greedily selected centroids.
    #[serde(rename = "park")]
    Park,
    /// Same pipeline with uniformly sampled centroids.
    #[serde(rename = "park-uni")]
    ParkUni,
    /// Random-split divide and conquer, theory-scaled center budgets.
    #[serde(rename = "dnc-v1")]
    DncV1,
    /// Random-split divide and conquer with multiplied center budgets.
    #[serde(rename = "dnc-v2")]
    DncV2,
    /// Single global sketched solver (one cell).
    #[serde(rename = "falkon-global")]
    FalkonGlobal,
    /// Exact kernel ridge regression (dense factorization).
    #[serde(rename = "krr-exact")]
    KrrExact,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Mode::Park => "park",
            Mode::ParkUni => "park-uni",
            Mode::DncV1 => "dnc-v1",
            Mode::DncV2 => "dnc-v2",
            Mode::FalkonGlobal => "falkon-global",
            Mode::KrrExact => "krr-exact",
        };
        write!(f, "{name}")
    }
}

impl FromStr for Mode {
    type Err = ParkError;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "park" => Ok(Mode::Park),
            "park-uni" => Ok(Mode::ParkUni),
            "dnc-v1" => Ok(Mode::DncV1),
            "dnc-v2" => Ok(Mode::DncV2),
            "falkon-global" => Ok(Mode::FalkonGlobal),
            "krr-exact" => Ok(Mode::KrrExact),
            other => Err(ParkError::Input(format!(
                "unknown mode '{other}' (expected park|park-uni|dnc-v1|dnc-v2|falkon-global|krr-exact)"
            ))),
        }
    }
}

/// Full run configuration. Optional numeric fields resolve from the data
/// at run time (and the resolved values are embedded in every report):
/// bandwidth -> median heuristic, lambda -> 1/sqrt(n), centers ->
/// 4 sqrt(n) capped at n, metric -> task default, test_fraction -> 0
/// (0.2 under `bench`).
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub mode: Mode,
    pub kernel: KernelFamily,
    pub bandwidth: Option<f64>,
    /// Number of cells (Q).
    pub cells: usize,
    /// Global regularization; cells use lambda / rho_q.
    pub lambda: Option<f64>,
    /// Total center budget m; cells use ceil(m rho_q).
    pub centers: Option<usize>,
    /// Solver iterations per cell.
    pub iterations: usize,
    /// Center-budget multiplier for dnc-v2.
    pub center_multiplier: f64,
    pub seed: u64,
    pub trials: usize,
    pub test_fraction: Option<f64>,
    pub metric: Option<Metric>,
    /// Evaluate the theory report (needs ground truth; routed modes only).
    pub diagnostics: bool,
    /// Confidence parameter for the theory report.
    pub delta: f64,
    /// Row-block size for streamed kernel products.
    pub block_rows: usize,
    /// Train cells concurrently (results are identical either way).
    pub parallel_cells: bool,
    /// Input data: binary cache or CSV (sniffed by magic).
    pub data: Option<PathBuf>,
    pub label_column: usize,
    pub delimiter: String,
    pub has_header: bool,
    pub task: Option<Task>,
    /// JSON report destination.
    pub output: Option<PathBuf>,
    /// Summary table destination (CSV: error, init, train, total).
    pub csv_output: Option<PathBuf>,
    /// Trained model destination (last trial).
    pub model_output: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            mode: Mode::Park,
            kernel: KernelFamily::Gaussian,
            bandwidth: None,
            cells: 4,
            lambda: None,
            centers: None,
            iterations: 20,
            center_multiplier: 3.0,
            seed: 0,
            trials: 1,
            test_fraction: None,
            metric: None,
            diagnostics: false,
            delta: 0.05,
            block_rows: 4096,
            parallel_cells: false,
            data: None,
            label_column: 0,
            delimiter: ",".to_string(),
            has_header: false,
            task: None,
            output: None,
            csv_output: None,
            model_output: None,
        }
    }
}

impl RunConfig {
    /// Basic validation independent of the dataset.
    pub fn validate(&self) -> Result<()> {
        if self.cells == 0 {
            return Err(ParkError::Input("cells must be >= 1".into()));
        }
        if let Some(l) = self.lambda {
            if !(l > 0.0 && l.is_finite()) {
                return Err(ParkError::Input(format!("lambda must be positive, got {l}")));
            }
        }
        if let Some(b) = self.bandwidth {
            if !(b > 0.0 && b.is_finite()) {
                return Err(ParkError::Input(format!("bandwidth must be positive, got {b}")));
            }
        }
        if self.iterations == 0 {
            return Err(ParkError::Input("iterations must be >= 1".into()));
        }
        if self.trials == 0 {
            return Err(ParkError::Input("trials must be >= 1".into()));
        }
        if !(self.center_multiplier > 0.0 && self.center_multiplier.is_finite()) {
            return Err(ParkError::Input(format!(
                "center multiplier must be positive, got {}",
                self.center_multiplier
            )));
        }
        if let Some(f) = self.test_fraction {
            if !(0.0..1.0).contains(&f) {
                return Err(ParkError::Input(format!(
                    "test fraction must lie in [0, 1), got {f}"
                )));
            }
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(ParkError::Input(format!(
                "delta must lie in (0, 1), got {}",
                self.delta
            )));
        }
        if self.block_rows == 0 {
            return Err(ParkError::Input("block_rows must be >= 1".into()));
        }
        if self.delimiter.as_bytes().len() != 1 {
            return Err(ParkError::Input(format!(
                "delimiter must be a single byte, got '{}'",
                self.delimiter
            )));
        }
        Ok(())
    }

    pub fn delimiter_byte(&self) -> u8 {
        self.delimiter.as_bytes()[0]
    }

    /// Parse a config file. A leading '{' selects JSON; otherwise the file
    /// is read as `key = value` lines ('#' comments allowed) against the
    /// same schema.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let map = parse_to_map(&text)?;
        Self::from_map(map)
    }

    /// Build from a JSON object, e.g. assembled from key=value pairs.
    pub fn from_map(map: Map<String, Value>) -> Result<Self> {
        let config: RunConfig = serde_json::from_value(Value::Object(map))
            .map_err(|e| ParkError::Parse { line: None, message: e.to_string() })?;
        config.validate()?;
        Ok(config)
    }

    /// Apply `key=value` overrides (same schema as config files) on top of
    /// this configuration.
    pub fn with_overrides(&self, overrides: &[(String, Value)]) -> Result<Self> {
        let mut map = match serde_json::to_value(self) {
            Ok(Value::Object(m)) => m,
            _ => unreachable!("config serializes to an object"),
        };
        for (key, value) in overrides {
            map.insert(key.clone(), value.clone());
        }
        Self::from_map(map)
    }
}

/// Sniff a typed JSON value out of a raw string: bool, integer, float, or
/// bare string.
pub fn sniff_value(raw: &str) -> Value {
    let raw = raw.trim();
    if raw.eq_ignore_ascii_case("true") {
        return Value::Bool(true);
    }
    if raw.eq_ignore_ascii_case("false") {
        return Value::Bool(false);
    }
    if raw.eq_ignore_ascii_case("none") || raw.eq_ignore_ascii_case("null") {
        return Value::Null;
    }
    if let Ok(i) = raw.parse::<u64>() {
        return Value::Number(i.into());
    }
    if let Ok(f) = raw.parse::<f64>() {
        if let Some(num) = serde_json::Number::from_f64(f) {
            return Value::Number(num);
        }
    }
    Value::String(raw.to_string())
}

fn parse_to_map(text: &str) -> Result<Map<String, Value>> {
    let trimmed = text.trim_start();
    if trimmed.starts_with('{') {
        return match serde_json::from_str::<Value>(text) {
            Ok(Value::Object(map)) => Ok(map),
            Ok(_) => Err(ParkError::Parse {
                line: None,
                message: "config JSON must be an object".into(),
            }),
            Err(e) => Err(ParkError::Parse {
                line: Some(e.line() as u64),
                message: e.to_string(),
            }),
        };
    }
    let mut map = Map::new();
    for (idx, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(ParkError::Parse {
                line: Some(idx as u64 + 1),
                message: format!("expected key = value, got '{line}'"),
            });
        };
        map.insert(key.trim().to_string(), sniff_value(value));
    }
    Ok(map)
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    #[test]
    fn key_value_and_json_files_parse_identically() {
        let dir = tempdir().unwrap();
        let kv = dir.path().join("run.conf");
        std::fs::write(
            &kv,
            "# benchmark setup\nmode = park-uni\ncells = 8\nlambda = 0.01\nseed = 7\nparallel_cells = true\n",
        )
        .unwrap();
        let a = RunConfig::from_file(&kv).unwrap();
        let js = dir.path().join("run.json");
        std::fs::write(
            &js,
            r#"{"mode": "park-uni", "cells": 8, "lambda": 0.01, "seed": 7, "parallel_cells": true}"#,
        )
        .unwrap();
        let b = RunConfig::from_file(&js).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.mode, Mode::ParkUni);
        assert_eq!(a.cells, 8);
        assert_eq!(a.lambda, Some(0.01));
        assert!(a.parallel_cells);
        // untouched keys keep defaults
        assert_eq!(a.iterations, 20);
    }

    #[test]
    fn unknown_keys_and_bad_values_are_rejected() {
        let dir = tempdir().unwrap();
        let bad = dir.path().join("bad.conf");
        std::fs::write(&bad, "sells = 8\n").unwrap();
        assert!(matches!(
            RunConfig::from_file(&bad),
            Err(ParkError::Parse { .. })
        ));
        let invalid = dir.path().join("invalid.conf");
        std::fs::write(&invalid, "lambda = -2.0\n").unwrap();
        assert!(matches!(
            RunConfig::from_file(&invalid),
            Err(ParkError::Input(_))
        ));
        let ragged = dir.path().join("ragged.conf");
        std::fs::write(&ragged, "mode park\n").unwrap();
        match RunConfig::from_file(&ragged) {
            Err(ParkError::Parse { line: Some(1), .. }) => {}
            other => panic!("expected line-1 parse error, got {other:?}"),
        }
    }

    #[test]
    fn overrides_replace_file_values() {
        let base = RunConfig { cells: 4, seed: 1, ..RunConfig::default() };
        let over = base
            .with_overrides(&[
                ("cells".to_string(), sniff_value("16")),
                ("mode".to_string(), sniff_value("krr-exact")),
                ("bandwidth".to_string(), sniff_value("2.5")),
            ])
            .unwrap();
        assert_eq!(over.cells, 16);
        assert_eq!(over.mode, Mode::KrrExact);
        assert_eq!(over.bandwidth, Some(2.5));
        assert_eq!(over.seed, 1);
        // resilience: an override can clear an optional back to auto
        let cleared = over
            .with_overrides(&[("bandwidth".to_string(), Value::Null)])
            .unwrap();
        assert_eq!(cleared.bandwidth, None);
    }

    #[test]
    fn config_json_round_trip_is_stable() {
        let config = RunConfig {
            mode: Mode::DncV2,
            bandwidth: Some(1.5),
            lambda: Some(0.02),
            centers: Some(300),
            metric: Some(Metric::OneMinusAuc),
            data: Some(PathBuf::from("x.pkds")),
            ..RunConfig::default()
        };
        let json = serde_json::to_string(&config).unwrap();
        let back: RunConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(config, back);
        assert!(json.contains("\"dnc-v2\""));
        assert!(json.contains("\"1-auc\""));
    }

    #[test]
    fn mode_strings_round_trip() {
        for mode in [
            Mode::Park,
            Mode::ParkUni,
            Mode::DncV1,
            Mode::DncV2,
            Mode::FalkonGlobal,
            Mode::KrrExact,
        ] {
            let s = mode.to_string();
            assert_eq!(s.parse::<Mode>().unwrap(), mode);
        }
        assert!("sparkle".parse::<Mode>().is_err());
    }
}
