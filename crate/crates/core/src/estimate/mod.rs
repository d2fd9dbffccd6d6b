//! Touch and hover estimation.
//!
//! Two independent estimators share the output types: the geometric path
//! inverts the shadow gap analytically, the learned path runs a small
//! perceptron on fingertip patches whose single logit encodes both touch
//! state (through its sign) and hover distance (through its magnitude).

mod geometric;
mod metrics;
mod model;
mod temporal;
mod train;

use serde::{Deserialize, Serialize};

pub use geometric::{
    detect_shadow_tip, fuse_hover, geometric_hover, geometric_hover_capsule, DetectParams,
    FingerDims, FingerPixels, GeometricEstimator, HoverFit, ShadowDetection,
};
pub use metrics::{evaluate, FingerMetrics, Metrics, Prediction, FAR_BAND_MM, NEAR_BAND_MM};
pub use model::{
    downsample_channel, features, infer, input_dim, push_finger_one_hot, sigmoid, Inference, Model,
    DEFAULT_HIDDEN, DEFAULT_KAPPA_MM, DEFAULT_TAU, FEATURE_BINS, FEATURE_GRID, FINGER_IDS,
    MODEL_MAGIC, MODEL_VERSION,
};
pub use temporal::{
    segment_events, smooth, write_events_jsonl, EventSegmenter, Hysteresis, MeanFilter, TouchEvent,
    SMOOTHING_WINDOW,
};
pub use train::{
    gradient_check, loss_and_grad, train, train_on_features, Gradients, Stage, TrainConfig,
    TrainReport, TrainingData,
};

/// Per-frame, per-finger estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TouchEstimate {
    pub frame_index: u64,
    pub finger_id: u8,
    pub logit: f64,
    /// Mean of the most recent raw touch probabilities.
    pub probability: f64,
    pub hover_mm: f64,
}
