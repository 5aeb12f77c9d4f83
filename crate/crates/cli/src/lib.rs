//! Batch driver for boundary-distance profiling: reads images and boundary
//! files, runs the analysis stages and writes reports and plots.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod error;
pub mod imageio;
pub mod pipeline;
pub mod plot;
pub mod report;
pub mod synthfiles;

pub use config::RunConfig;
pub use error::CliError;
pub use pipeline::{run_pipeline, RunOptions, RunOutcome, Stage};
