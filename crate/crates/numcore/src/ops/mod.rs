//! Differentiable operations, implemented as methods on [`crate::Tape`].

pub(crate) mod attention;
pub(crate) mod conv;
pub(crate) mod elementwise;
pub(crate) mod linalg;
pub(crate) mod norm;
pub(crate) mod resize;
pub(crate) mod shape;
pub(crate) mod softmax;

pub use attention::AttentionWeights;
pub use norm::{BatchNormMode, BatchStats};
pub use resize::{taps, Tap};
