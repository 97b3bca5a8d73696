//! Two-stage respiratory-sound classification.
//!
//! Annotated events are cut into fixed 2 s clips, embedded by a pluggable
//! encoder, classified by three task heads, fused by a stacked
//! gradient-boosted meta-learner over out-of-fold probabilities, and finally
//! voted up to one prediction per patient.

pub mod aggregator;
pub mod corpus;
pub mod dsp;
pub mod encoder;
pub mod error;
pub mod heads;
pub mod metrics;
pub mod pipeline;
pub mod stacker;
pub mod synth;
pub mod tasks;
pub mod workflow;

pub use error::{Error, Result};
