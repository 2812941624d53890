//! Online detection of sparse mean changes in high-dimensional Gaussian
//! streams, with a post-declaration confidence interval for the changepoint
//! and an estimate of the set of changed coordinates.
//!
//! The pieces, bottom-up:
//!
//! * [`grid`]: dyadic grid of signed scales derived from `(p, β)`.
//! * [`detector`]: constant-memory streaming statistics and stopping rule.
//! * [`inference`]: anchor selection, support estimate, confidence interval.
//! * [`calibration`]: theoretical, practical and Monte Carlo tuning.
//! * [`simulation`]: signal generators and coverage/support experiments.
//! * [`ingest`] and [`monitor`]: CSV preprocessing and repeated monitoring
//!   with a cool-down period.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod calibration;
pub mod detector;
pub mod error;
pub mod grid;
pub mod inference;
pub mod ingest;
pub mod monitor;
pub mod rng;
pub mod simulation;

pub use calibration::{Provenance, TuningPreset};
pub use detector::{Declaration, DetectorConfig, DetectorState, StepOutcome, Variant};
pub use error::{Error, Result};
pub use grid::{ScaleGrid, SignedScale};
pub use inference::{InferenceConfig, InferenceResult, RunOutcome, XiStatistics};
pub use simulation::{ExperimentReport, SignalShape};
