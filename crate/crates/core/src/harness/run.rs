//! The trial loop: resolve settings against the data, train the selected
//! estimator, evaluate, and assemble the report.

use std::time::Instant;

use ndarray::Array1;

use crate::diagnostics::{check_bounds, excess_risk};
use crate::error::{ParkError, Result};
use crate::estimator::{derive_seed, dnc_train, krr_train, park_train, ParkConfig};
use crate::harness::config::{Mode, RunConfig};
use crate::harness::data::{
    is_dataset_cache, load_csv, load_dataset, median_heuristic_bandwidth, CsvSchema, Dataset,
    Task,
};
use crate::harness::metrics::{default_metric, evaluate_metric};
use crate::harness::report::{DatasetInfo, RunReport, Summary, TrialRecord};
use crate::kernel::{KernelFamily, KernelSpec};
use crate::model_io::{save_dnc_model, save_park_model, SavedModel};
use crate::partition::CentroidMode;

const TRIAL_STREAM: u64 = 0x54524941; // "TRIA"

/// Load the dataset a config points at: binary cache or CSV, sniffed by
/// file magic.
pub fn load_configured_dataset(config: &RunConfig) -> Result<Dataset> {
    let Some(path) = &config.data else {
        return Err(ParkError::Input(
            "no data source configured; set data=PATH (cache or CSV)".into(),
        ));
    };
    if is_dataset_cache(path)? {
        load_dataset(path)
    } else {
        let schema = CsvSchema {
            label_column: config.label_column,
            delimiter: config.delimiter_byte(),
            has_header: config.has_header,
            task: config.task.unwrap_or(Task::Regression),
        };
        load_csv(path, &schema)
    }
}

/// Fill every optional setting with the value actually used, so the
/// embedded config reproduces the run exactly.
fn resolve(config: &RunConfig, train: &Dataset, test_fraction: f64) -> Result<RunConfig> {
    let n = train.n();
    let bandwidth = match config.kernel {
        KernelFamily::Linear => 1.0,
        _ => match config.bandwidth {
            Some(b) => b,
            None => median_heuristic_bandwidth(&train.x, config.seed)?,
        },
    };
    let lambda = config.lambda.unwrap_or(1.0 / (n as f64).sqrt());
    let centers = config
        .centers
        .unwrap_or_else(|| ((4.0 * (n as f64).sqrt()).ceil() as usize).min(n))
        .max(config.cells);
    let metric = config.metric.unwrap_or_else(|| default_metric(train.task));
    Ok(RunConfig {
        bandwidth: Some(bandwidth),
        lambda: Some(lambda),
        centers: Some(centers),
        metric: Some(metric),
        test_fraction: Some(test_fraction),
        task: Some(train.task),
        ..config.clone()
    })
}

struct TrialOutput {
    record: TrialRecord,
    model: SavedModel,
}

fn run_trial(
    trial: usize,
    seed: u64,
    resolved: &RunConfig,
    spec: &KernelSpec,
    train: &Dataset,
    eval: &Dataset,
) -> Result<TrialOutput> {
    let lambda = resolved.lambda.expect("resolved");
    let park_config = ParkConfig {
        cells: match resolved.mode {
            Mode::FalkonGlobal | Mode::KrrExact => 1,
            _ => resolved.cells,
        },
        lambda,
        centers: resolved.centers.expect("resolved"),
        iterations: resolved.iterations,
        mode: match resolved.mode {
            Mode::Park => CentroidMode::Greedy,
            _ => CentroidMode::Uniform,
        },
        seed,
        block_rows: resolved.block_rows,
        parallel_cells: resolved.parallel_cells,
    };
    let (model, report) = match resolved.mode {
        Mode::Park | Mode::ParkUni | Mode::FalkonGlobal => {
            let (m, r) = park_train(&train.x, &train.y, spec, &park_config)?;
            (SavedModel::Routed(m), r)
        }
        Mode::KrrExact => {
            let (m, r) = krr_train(&train.x, &train.y, spec, lambda)?;
            (SavedModel::Routed(m), r)
        }
        Mode::DncV1 => {
            let (m, r) = dnc_train(&train.x, &train.y, spec, &park_config, 1.0)?;
            (SavedModel::Averaged(m), r)
        }
        Mode::DncV2 => {
            let (m, r) =
                dnc_train(&train.x, &train.y, spec, &park_config, resolved.center_multiplier)?;
            (SavedModel::Averaged(m), r)
        }
    };

    let started = Instant::now();
    let predictions = model.predict_batch(&eval.x)?;
    let predict_seconds = started.elapsed().as_secs_f64();

    let metric = resolved.metric.expect("resolved");
    let error = evaluate_metric(metric, &predictions, &eval.y)?;
    let risk = match &eval.truth {
        Some(truth) => Some(excess_risk(
            &predictions,
            &Array1::from_vec(truth.values.clone()),
        )?),
        None => None,
    };
    let diagnostics = if resolved.diagnostics {
        let truth = train.truth.as_ref().ok_or_else(|| {
            ParkError::Input("the theory report needs generative ground truth".into())
        })?;
        let SavedModel::Routed(routed) = &model else {
            return Err(ParkError::Input(
                "the theory report needs a routed (partitioned) model".into(),
            ));
        };
        Some(check_bounds(routed, &train.x, truth, resolved.delta)?)
    } else {
        None
    };

    Ok(TrialOutput {
        record: TrialRecord {
            trial,
            seed,
            error: Some(error),
            excess_risk: risk,
            init_seconds: report.init_seconds,
            train_seconds: report.train_seconds,
            predict_seconds,
            total_seconds: report.init_seconds + report.train_seconds + predict_seconds,
            diagnostics,
            failure: None,
        },
        model,
    })
}

/// Run every trial of a configuration on a dataset. Setup problems return
/// `Err`; a trial failure aborts the loop, is recorded in the report, and
/// comes back as the second tuple element so callers can both persist the
/// report and propagate the error.
pub fn run(config: &RunConfig, dataset: &Dataset) -> Result<(RunReport, Option<ParkError>)> {
    config.validate()?;
    dataset.validate()?;
    if config.diagnostics {
        if dataset.truth.is_none() {
            return Err(ParkError::Input(
                "the theory report needs generative ground truth (synthetic cache)".into(),
            ));
        }
        if matches!(config.mode, Mode::DncV1 | Mode::DncV2) {
            return Err(ParkError::Input(
                "the theory report needs a routed (partitioned) model".into(),
            ));
        }
    }
    let test_fraction = config.test_fraction.unwrap_or(0.0);
    let (train, test) = dataset.split(test_fraction, config.seed)?;
    let resolved = resolve(config, &train, test_fraction)?;
    let spec = KernelSpec::new(resolved.kernel, resolved.bandwidth.expect("resolved"))?;
    let eval = test.as_ref().unwrap_or(&train);

    let mut records = Vec::with_capacity(resolved.trials);
    let mut last_model = None;
    let mut abort = None;
    for trial in 0..resolved.trials {
        let seed = derive_seed(resolved.seed, TRIAL_STREAM.wrapping_add(trial as u64));
        match run_trial(trial, seed, &resolved, &spec, &train, eval) {
            Ok(output) => {
                records.push(output.record);
                last_model = Some(output.model);
            }
            Err(e) => {
                records.push(TrialRecord {
                    trial,
                    seed,
                    error: None,
                    excess_risk: None,
                    init_seconds: 0.0,
                    train_seconds: 0.0,
                    predict_seconds: 0.0,
                    total_seconds: 0.0,
                    diagnostics: None,
                    failure: Some(e.to_string()),
                });
                abort = Some(e);
                break;
            }
        }
    }

    if let (Some(path), Some(model)) = (&resolved.model_output, &last_model) {
        match model {
            SavedModel::Routed(m) => save_park_model(path, m)?,
            SavedModel::Averaged(m) => save_dnc_model(path, m)?,
        }
    }

    let summary = Summary::from_trials(&records);
    let report = RunReport {
        dataset: DatasetInfo {
            name: dataset.name.clone(),
            task: dataset.task,
            n_total: dataset.n(),
            n_train: train.n(),
            n_test: test.as_ref().map(|t| t.n()).unwrap_or(0),
            d: dataset.d(),
            has_truth: dataset.truth.is_some(),
        },
        metric: resolved.metric.expect("resolved"),
        config: resolved,
        trials: records,
        summary,
    };
    Ok((report, abort))
}

/// Load the configured dataset, run, and write the configured outputs.
/// A trial failure still writes the report before propagating the error.
pub fn execute(config: &RunConfig) -> Result<RunReport> {
    let dataset = load_configured_dataset(config)?;
    let (report, failure) = run(config, &dataset)?;
    if let Some(path) = &report.config.output {
        report.write_json(path)?;
    }
    if let Some(path) = &report.config.csv_output {
        report.write_csv(path)?;
    }
    match failure {
        Some(e) => Err(e),
        None => Ok(report),
    }
}
