//! Experiment orchestration: evaluation protocols on simulator data,
//! per-horizon RMSE, the last-value baseline and report files.

pub mod config;
pub mod experiment;
pub mod metrics;
pub mod report;

pub use config::{EvalConfig, ExperimentConfig, Setting};
pub use experiment::{build_eval_cases, evaluate_last_value, evaluate_model, run_experiment, EvalCase, METHOD_COSTAR, METHOD_LAST_VALUE, METHOD_NO_SSL};
pub use metrics::{baseline_last_value, rmse, MethodMetrics, MetricsReport, RunRecord, SeedMetrics};
pub use report::{emit_report, load_report, summary_table, MetricCell};
