//! Stage runner, direct subcommands and SNR reports for the spoofbench
//! toolkit.

pub mod config;
mod error;
pub mod ops;
pub mod pipeline;
pub mod records;
pub mod report;

pub use config::PipelineConfig;
pub use error::{CliError, CliResult};
pub use pipeline::{run_pipeline, run_stage, Stage, StageStatus, ALL_STAGES};
pub use report::{snr_report, HistogramReport};
