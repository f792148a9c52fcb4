//! Experiment orchestration: configuration, metric logs, checkpoints, plots
//! and the command implementations behind the CLI.

pub mod checkpoint;
mod commands;
mod config;
pub mod log;
pub mod plot;

pub use checkpoint::{list_checkpoints, load_checkpoint, save_checkpoint, LoadedCheckpoint, Manifest, TensorEntry};
pub use commands::{
    eval, plot, refgame, train, EvalReport, FileSink, RefGameReport, SummaryFile, CHECKPOINT_DIR, CONFIG_FILE, METRICS_FILE,
    SUMMARY_FILE,
};
pub use config::{apply_override, RefGameRunConfig, RunConfig};
pub use log::{read_metric_log, MetricLog, MetricRecord};
