//! Experiment harness: data generation and ingestion, error metrics, run
//! configuration, the trial loop, and report emission.

pub mod config;
pub mod data;
pub mod metrics;
pub mod report;
pub mod run;

pub use config::{Mode, RunConfig};
pub use data::{
    is_dataset_cache, load_csv, load_dataset, median_heuristic_bandwidth, save_dataset,
    synth_fixed_design, BlobArrangement, CsvSchema, Dataset, SynthSpec, Task,
};
pub use metrics::{default_metric, evaluate_metric, Metric};
pub use report::{RunReport, Summary, TrialRecord};
pub use run::{execute, run};
