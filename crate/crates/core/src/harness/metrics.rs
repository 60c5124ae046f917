//! Error metrics: rmse / mse for regression, classification error and
//! 1 - AUC for binary tasks.

use std::fmt;
use std::str::FromStr;

use ndarray::Array1;
use serde::{Deserialize, Serialize};

use crate::error::{ParkError, Result};
use crate::harness::data::Task;
use crate::numerics::stable_sum;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Metric {
    #[serde(rename = "rmse")]
    Rmse,
    #[serde(rename = "mse")]
    Mse,
    /// Misclassification rate of sign(prediction) against +-1 labels.
    #[serde(rename = "c-err")]
    CErr,
    /// One minus the area under the ROC curve (ranking loss).
    #[serde(rename = "1-auc")]
    OneMinusAuc,
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Metric::Rmse => "rmse",
            Metric::Mse => "mse",
            Metric::CErr => "c-err",
            Metric::OneMinusAuc => "1-auc",
        };
        write!(f, "{name}")
    }
}

impl FromStr for Metric {
    type Err = ParkError;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "rmse" => Ok(Metric::Rmse),
            "mse" => Ok(Metric::Mse),
            "c-err" | "cerr" => Ok(Metric::CErr),
            "1-auc" | "auc-loss" => Ok(Metric::OneMinusAuc),
            other => Err(ParkError::Input(format!(
                "unknown metric '{other}' (expected rmse|mse|c-err|1-auc)"
            ))),
        }
    }
}

/// The conventional metric for each task.
pub fn default_metric(task: Task) -> Metric {
    match task {
        Task::Regression => Metric::Rmse,
        Task::Binary => Metric::CErr,
    }
}

fn mse(predictions: &Array1<f64>, targets: &Array1<f64>) -> f64 {
    let sq = stable_sum((0..predictions.len()).map(|i| {
        let d = predictions[i] - targets[i];
        d * d
    }));
    sq / predictions.len() as f64
}

/// Decision rule for binary predictions: the sign, with ties sent to +1.
fn to_label(score: f64) -> f64 {
    if score >= 0.0 {
        1.0
    } else {
        -1.0
    }
}

/// AUC by the rank statistic: (sum of positive ranks - n_+(n_+ + 1)/2) /
/// (n_+ n_-), with average ranks on tied scores.
fn auc(scores: &Array1<f64>, labels: &Array1<f64>) -> Result<f64> {
    let n = scores.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).expect("finite scores"));
    let mut ranks = vec![0.0f64; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks are 1-based; ties share the average rank of their block
        let avg = (i + j + 2) as f64 / 2.0;
        for &idx in &order[i..=j] {
            ranks[idx] = avg;
        }
        i = j + 1;
    }
    let n_pos = labels.iter().filter(|&&l| l == 1.0).count();
    let n_neg = n - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(ParkError::Input(
            "AUC needs both classes present in the targets".into(),
        ));
    }
    let rank_sum: f64 = (0..n).filter(|&i| labels[i] == 1.0).map(|i| ranks[i]).sum();
    Ok((rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0) / (n_pos as f64 * n_neg as f64))
}

/// Evaluate a metric on prediction/target pairs. Binary metrics require
/// +-1 targets; AUC uses the raw scores for ranking.
pub fn evaluate_metric(
    metric: Metric,
    predictions: &Array1<f64>,
    targets: &Array1<f64>,
) -> Result<f64> {
    if predictions.len() != targets.len() || predictions.is_empty() {
        return Err(ParkError::Input(format!(
            "prediction/target length mismatch: {} vs {}",
            predictions.len(),
            targets.len()
        )));
    }
    if predictions.iter().any(|v| !v.is_finite()) {
        return Err(ParkError::Numerical("non-finite predictions".into()));
    }
    match metric {
        Metric::Mse => Ok(mse(predictions, targets)),
        Metric::Rmse => Ok(mse(predictions, targets).sqrt()),
        Metric::CErr => {
            if targets.iter().any(|&l| l != 1.0 && l != -1.0) {
                return Err(ParkError::Input("classification error needs +-1 targets".into()));
            }
            let wrong = (0..predictions.len())
                .filter(|&i| to_label(predictions[i]) != targets[i])
                .count();
            Ok(wrong as f64 / predictions.len() as f64)
        }
        Metric::OneMinusAuc => {
            if targets.iter().any(|&l| l != 1.0 && l != -1.0) {
                return Err(ParkError::Input("AUC needs +-1 targets".into()));
            }
            Ok(1.0 - auc(predictions, targets)?)
        }
    }
}
