//! Synthetic scenes and a ray-cast renderer.
//!
//! Everything downstream is checked against this module: the renderer is
//! additive in the lights it is given, and [`truth`] derives labels
//! (hover, touch, keypoint pixels, analytic shadow tips) from the same
//! geometry.

mod camera;
mod config;
mod geometry;
mod render;
mod scene;
pub mod shadow;
mod truth;

pub use camera::PinholeCamera;
pub use config::{CameraConfig, LedConfig, SceneConfig, SurfaceConfig};
pub use geometry::{ray_capsule, ray_disk, Plane, Ray};
pub use render::{
    quantize, render_layers, render_sequence, render_subframe, LightSet, NoiseModel, SensorModel,
    SUBFRAME_SPACING_US,
};
pub use scene::{
    CapsuleFinger, Falloff, FingerKeypoints, FingerPose, HeadsetLed, Palm, PointLight,
    RenderSettings, Scene, Surface, Texture, DEFAULT_CONTACT_EPSILON_MM,
};
pub use shadow::{gap_from_hover, hover_from_gap, shadow_tip_on_plane};
pub use truth::{ground_truth, FingerTruth, GroundTruth};
