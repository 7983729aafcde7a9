//! Allocation-only core of the UniADC pipeline.
//!
//! Everything in this crate is a pure function of its inputs and an explicit
//! seed: mask generation from shape/size priors, controllable inpainting
//! behind a backend trait, category consistency selection, the multi-task
//! discriminator with hand-written gradients, and the evaluation metrics.
//! IO, file formats and the command line live in the `uniadc` crate.

#![cfg_attr(not(any(test, feature = "std")), no_std)]

extern crate alloc;

pub mod components;
pub mod discriminator;
pub mod error;
pub mod grid;
pub mod maskgen;
pub(crate) mod math;
pub mod metrics;
pub mod rng;
pub mod select;
pub mod synth;
pub mod toy;

pub use error::{Error, Result};
pub use grid::{BinaryMask, ForegroundMap, Grid, ImageGrid, LabelMask, ScoreMap};
pub use maskgen::{MaskShape, SizeClass};
pub use synth::{AnomalyPrior, NoiseFactor, SynthSample};

/// Category label. `0` is the normal class, anomaly categories are `1..=Y`.
pub type Label = u8;
