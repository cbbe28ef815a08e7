//! Configuration, orchestration, logging, and reporting.

mod analyze;
mod experiment;
mod log;
mod report;
mod sweep;

pub use analyze::{analyze_log, analyze_records, read_ground_truth, AnalyticsReport, TruthSource};
pub use experiment::{
    load_config, parse_config, run_experiment, run_experiment_in_memory, run_many,
    run_many_outputs, ExperimentConfig, Mechanisms, Method, ResolvedConfig, RunOutput, RunParams,
    RunSummary,
};
pub use log::{read_log, write_log, LogHeader, TrajectoryLog, LOG_SCHEMA, LOG_VERSION};
pub use report::{render_report, RenderedReport, REPORT_COLUMNS};
pub use sweep::{parse_grid_arg, sweep, SweepCell, SweepGrid};
