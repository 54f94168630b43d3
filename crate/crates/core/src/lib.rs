//! Multi-scale visual prompting workbench: datasets, prompt fusion,
//! backbones, training, evaluation and experiment orchestration.

pub mod backbones;
pub mod datasets;
pub mod error;
pub mod evaluation;
pub mod harness;
pub mod msvp;
pub mod nn;
pub mod prng;
pub mod trainer;

pub use error::{CheckpointError, DataError, Error, Result};
