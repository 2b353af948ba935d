//! Simulation harness: configuration, the online run loop, reports, replay
//! and dataset files.

pub mod config;
pub mod io;
pub mod report;
pub mod run;

pub use config::{DatasetSource, FunctionSpec, PortfolioSpec, RunConfig, SelectorConfig};
pub use report::{Event, MetricsRow, RunReport, StepRecord};
pub use run::{gap_column, replay, replay_file, run};
