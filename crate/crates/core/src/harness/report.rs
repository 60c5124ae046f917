//! Run reports: per-trial records, aggregate summary, JSON emission, and
//! the benchmark-table CSV layout (error, init, train, total).

use std::path::Path;

use serde::Serialize;

use crate::diagnostics::DiagnosticsReport;
use crate::error::{ParkError, Result};
use crate::harness::config::RunConfig;
use crate::harness::data::Task;
use crate::harness::metrics::Metric;

/// Shape and provenance of the data a report was produced on.
#[derive(Debug, Clone, Serialize)]
pub struct DatasetInfo {
    pub name: String,
    pub task: Task,
    pub n_total: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub d: usize,
    /// Whether generative ground truth was available.
    pub has_truth: bool,
}

/// One trial: seed, error, wall times, and (optionally) the theory report.
#[derive(Debug, Clone, Serialize)]
pub struct TrialRecord {
    pub trial: usize,
    pub seed: u64,
    /// Metric value on the evaluation set; absent when the trial failed.
    pub error: Option<f64>,
    /// Mean squared gap to the generative target, when ground truth exists.
    pub excess_risk: Option<f64>,
    pub init_seconds: f64,
    pub train_seconds: f64,
    pub predict_seconds: f64,
    pub total_seconds: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub diagnostics: Option<DiagnosticsReport>,
    /// Structured failure record; the run aborts on the first failure.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

/// Aggregates over the successful trials (sample standard deviation).
#[derive(Debug, Clone, Serialize)]
pub struct Summary {
    pub trials: usize,
    pub succeeded: usize,
    pub failed: usize,
    pub error_mean: Option<f64>,
    pub error_std: Option<f64>,
    pub init_mean: f64,
    pub init_std: f64,
    pub train_mean: f64,
    pub train_std: f64,
    pub total_mean: f64,
    pub total_std: f64,
}

/// Mean and sample standard deviation (0 for fewer than two values).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
        / (values.len() - 1) as f64;
    (mean, var.sqrt())
}

impl Summary {
    pub fn from_trials(trials: &[TrialRecord]) -> Summary {
        let ok: Vec<&TrialRecord> = trials.iter().filter(|t| t.failure.is_none()).collect();
        let errors: Vec<f64> = ok.iter().filter_map(|t| t.error).collect();
        let (error_mean, error_std) = mean_std(&errors);
        let (init_mean, init_std) =
            mean_std(&ok.iter().map(|t| t.init_seconds).collect::<Vec<_>>());
        let (train_mean, train_std) =
            mean_std(&ok.iter().map(|t| t.train_seconds).collect::<Vec<_>>());
        let (total_mean, total_std) =
            mean_std(&ok.iter().map(|t| t.total_seconds).collect::<Vec<_>>());
        Summary {
            trials: trials.len(),
            succeeded: ok.len(),
            failed: trials.len() - ok.len(),
            error_mean: if errors.is_empty() { None } else { Some(error_mean) },
            error_std: if errors.is_empty() { None } else { Some(error_std) },
            init_mean,
            init_std,
            train_mean,
            train_std,
            total_mean,
            total_std,
        }
    }
}

/// Complete run output. The embedded config is fully resolved (every
/// optional setting filled with the value actually used), so re-running
/// from it reproduces the models bitwise.
#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub config: RunConfig,
    pub dataset: DatasetInfo,
    pub metric: Metric,
    pub trials: Vec<TrialRecord>,
    pub summary: Summary,
}

impl RunReport {
    pub fn first_failure(&self) -> Option<&str> {
        self.trials.iter().find_map(|t| t.failure.as_deref())
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self)
            .map_err(|e| ParkError::Numerical(format!("report serialization failed: {e}")))
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    /// One-row CSV in the benchmark-table layout:
    /// mode, metric, error, error_std, init, init_std, train, train_std,
    /// total, total_std.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
        w.write_record([
            "mode",
            "metric",
            "error",
            "error_std",
            "init",
            "init_std",
            "train",
            "train_std",
            "total",
            "total_std",
        ])
        .map_err(csv_err)?;
        let s = &self.summary;
        let fmt_opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
        w.write_record([
            self.config.mode.to_string(),
            self.metric.to_string(),
            fmt_opt(s.error_mean),
            fmt_opt(s.error_std),
            s.init_mean.to_string(),
            s.init_std.to_string(),
            s.train_mean.to_string(),
            s.train_std.to_string(),
            s.total_mean.to_string(),
            s.total_std.to_string(),
        ])
        .map_err(csv_err)?;
        w.flush()?;
        Ok(())
    }
}

fn csv_err(e: csv::Error) -> ParkError {
    ParkError::Io(std::io::Error::other(e))
}
