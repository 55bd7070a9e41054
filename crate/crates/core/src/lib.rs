//! Identification of a car's manufacturer from the sound of its running engine.
//!
//! The crate covers the whole pipeline: WAV ingestion, tempo-driven segmentation,
//! a 22-feature acoustic descriptor per segment, min-max normalization, nine
//! classifier families written from scratch, hyperparameter search by k-fold
//! cross-validation, leave-one-out evaluation and report rendering. A deterministic
//! synthetic engine-sound generator stands in for field recordings.

pub mod audio_io;
pub mod classifiers;
pub mod dsp;
pub mod dataset;
pub mod error;
pub mod features;
pub mod metrics;
pub mod pipeline;
pub mod report;
pub mod segmentation;
pub mod synth;
pub mod tuning;

pub use error::{Error, Result};
