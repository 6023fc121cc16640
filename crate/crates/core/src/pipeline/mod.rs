//! End-to-end orchestration: configuration, stages, run directories and reports.

pub mod config;
pub mod report;
pub mod run;
pub mod stages;
pub mod store;

pub use config::{CompressionMethod, PipelineConfig, ProxChoice, ReconMethod};
pub use report::{report, Report, ReportRow};
pub use run::{run_pipeline, Manifest, Run};
