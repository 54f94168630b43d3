//! Dense tensors and reverse-mode automatic differentiation for CPU training.
//!
//! Values live in [`Tensor`]s; computations are recorded on a [`Tape`] as
//! [`Var`]s and differentiated with [`Tape::backward`]. All operations are
//! generic over [`Float`] so gradients can be verified in `f64` while models
//! train in `f32`.

mod error;
pub mod gradcheck;
pub mod ops;
mod params;
mod scalar;
mod tape;
mod tensor;

pub use error::{Error, Result};
pub use ops::{taps, AttentionWeights, BatchNormMode, BatchStats, Tap};
pub use params::{ParamEntry, ParamId, ParamKind, ParamStore};
pub use scalar::{gemm, DType, Float, MatRef};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
