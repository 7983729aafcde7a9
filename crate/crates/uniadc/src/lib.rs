//! Files, formats, orchestration and command line for the UniADC pipeline.
//!
//! The algorithms live in `uniadc_core`; this crate reads datasets and
//! priors, runs synthesis, training, evaluation and threshold sweeps per
//! image class, and writes checkpoints, reports and run manifests.

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod io;
pub mod pipeline;
pub mod plot;
pub mod priors;
pub mod report;

pub use config::{Mode, RunConfig};
pub use error::{AppError, AppResult};
