//! Metrics, reports, checkpoints, configuration files, and experiment
//! orchestration.

mod checkpoint;
mod config;
mod experiment;
mod metrics;
mod report;

pub use checkpoint::{
    checkpoint_bytes, load_checkpoint, load_checkpoint_for, parse_checkpoint, save_checkpoint, CHECKPOINT_MAGIC,
    CHECKPOINT_VERSION,
};
pub use config::{parse_kv, to_kv};
pub use experiment::{
    build_samples, predict_samples, predictions_csv, run_ablation, run_experiment, run_on_cohort, score_manifest,
    RunConfig, RunOutcome, Scored,
};
pub use metrics::{accuracy, auc, confusion, dichotomize, f1, one_nearest_accuracy, recall};
pub use report::{ablation_table, Experiment, MetricsReport, ABLATION_HEADER, POSITIVE_CLASS};
