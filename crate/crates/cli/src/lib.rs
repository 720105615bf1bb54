//! Config-driven experiment runner over `rmtlab-core`.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod acceptance;
pub mod artifacts;
pub mod config;
pub mod experiments;

pub use acceptance::{run_criteria, CriterionOutcome};
pub use artifacts::ArtifactWriter;
pub use config::{ExperimentConfig, ExperimentKind};
pub use experiments::{run, run_with_threads, Metric, RunError, RunReport};
