//! Small single-stage grid/anchor detector: a strided conv pyramid with 1x1
//! heads at three strides, one positive anchor per ground-truth box, CIoU box
//! loss and independent-sigmoid BCE for objectness and classes.

mod anchors;
mod loss;
mod model;
mod targets;
mod train;

pub use anchors::{fallback_anchors, kmeans_anchors, AnchorSet};
pub use loss::{ciou_loss, ciou_value, detector_loss, LossBreakdown, LossWeights};
pub use model::{Detector, ModelSpec};
pub use targets::{assign_targets, decode, nms, Positive, Targets};
pub use train::{infer, load_samples, train_detector, DetectorConfig, StepLog, TrainLog, TrainSample};

use thiserror::Error;

use crate::ndgrad::NdError;

#[derive(Debug, Error)]
pub enum YoliteError {
    #[error("invalid detector configuration: {0}")]
    Config(String),
    #[error("training set is empty")]
    EmptyDataset,
    #[error("non-finite loss at step {step} (box {box_term}, obj {obj_term}, cls {cls_term})")]
    NonFinite { step: usize, box_term: f64, obj_term: f64, cls_term: f64 },
    #[error("image is {got}x{got_w} but the checkpoint expects {want}x{want}")]
    SizeMismatch { got: usize, got_w: usize, want: usize },
    #[error("checkpoint {path}: {message}")]
    Checkpoint { path: String, message: String },
    #[error("{0}")]
    Data(String),
    #[error(transparent)]
    Nd(#[from] NdError),
}

pub type Result<T, E = YoliteError> = std::result::Result<T, E>;
