//! Configuration, snapshot files, metrics and run orchestration.

pub mod config;
pub mod metrics;
pub mod pipeline;
pub mod snapshot;

pub use config::{parse_config, parse_config_with, Overrides, RunConfig, TEMPLATE};
pub use metrics::{emit_csv, emit_metrics, read_metrics, MetricRecord};
pub use snapshot::{read_snapshot, write_snapshot, Snapshot, SNAPSHOT_VERSION};
