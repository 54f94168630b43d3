//! Accuracy, confusion matrices, parameter overhead and GradCAM.

mod gradcam;
mod metrics;

pub use gradcam::{cam, gradcam, GradCamMap};
pub use metrics::{
    argmax, logits, overhead, overhead_report, predict, predictions, top1, ConfusionMatrix, Overhead, EVAL_BATCH,
};
