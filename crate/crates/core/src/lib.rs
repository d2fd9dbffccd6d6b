//! Touch and hover sensing from headset-cast infrared shadows.
//!
//! The crate is organised as a pipeline:
//!
//! 1. [`scenekit`] – synthetic scenes and a ray-cast renderer that produces
//!    additive irradiance images plus exact ground truth.
//! 2. [`streamio`] – the raw subframe container, firing-sequence demultiplexing
//!    and synthetic stream generation.
//! 3. [`suppress`] – ambient subtraction and normalization.
//! 4. [`patches`] – keypoint-driven fingertip patches.
//! 5. [`estimate`] – geometric and learned touch/hover estimators, smoothing and
//!    event segmentation.
//! 6. [`ablation`] – illuminator-configuration study over a frozen benchmark.
//!
//! [`pipeline`] ties stages 2–5 together for recorded streams.

pub mod ablation;
pub mod error;
pub mod estimate;
pub mod image;
pub mod patches;
pub mod pipeline;
pub mod scenekit;
pub mod streamio;
pub mod suppress;

pub use error::{Error, Result};
pub use estimate::{Model, TouchEstimate, TouchEvent};
pub use image::{GrayImage, Image};
pub use patches::{FingerPatch, HandKeypoints};
pub use scenekit::{
    CapsuleFinger, GroundTruth, Palm, PinholeCamera, Plane, PointLight, Scene, Surface,
};
pub use streamio::{CompositeFrame, RawSubframe};
pub use suppress::{ChannelMode, LedSet, SuppressedFrame};

/// Number of headset illuminators in a firing sequence.
pub const LED_COUNT: usize = 4;
/// Subframes per firing sequence (ambient + one per LED).
pub const STEPS_PER_SEQUENCE: usize = LED_COUNT + 1;
/// Sensor resolution.
pub const FRAME_WIDTH: usize = 640;
pub const FRAME_HEIGHT: usize = 480;
