//! Experiment harness: configuration, the training loop, metrics, run
//! files, parallel sweeps, comparison reports and 2-D plot dumps.

mod config;
mod metrics;
mod plot;
mod record;
mod report;
mod runner;
mod sweep;

pub use config::{
    lr_at, ArchSpec, DataSpec, ExperimentConfig, ImbalanceConfig, LrSchedule, OptimizerConfig, OptimizerKind,
};
pub use metrics::{
    argmax, evaluate, evaluate_grouped, metrics_from_predictions, minority_classes, predict, Metrics,
};
pub use plot::{emit_plot_data, sample_weights, GridSpec};
pub use record::{
    read_run, read_run_dir, run_file_name, write_failure, write_run, ProbeRow, RunFailure, RunFile, RunLine,
    RunRecord, RunSummary, TraceRow,
};
pub use report::{compare_report, format_mean_std, mean_std, Report, ReportRow};
pub use runner::{build_data, build_data_from, run_experiment, run_experiment_with, ExperimentData, ProbeEvent, RunOutput};
pub use sweep::{sweep, SweepResult};
