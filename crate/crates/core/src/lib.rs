//! Motif identification learning (MoIL) for complex work-activity
//! recognition from wearable accelerometers.
//!
//! The pipeline mines key motifs from unlabeled periods, builds per-period
//! motif similarity series, pretrains a convolutional/recurrent encoder to
//! regress those series, and finally trains a per-time-step classifier on
//! top of the frozen encoder.

pub mod artifacts;
pub mod config;
pub mod data;
pub mod downstream;
pub mod error;
pub mod model;
pub mod motif;
pub mod nn;
pub mod pipeline;
pub mod protocol;
pub mod synth;

pub use error::{MoilError, Result};
