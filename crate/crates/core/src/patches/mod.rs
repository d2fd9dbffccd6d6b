//! Keypoint-normalized fingertip patches.
//!
//! A patch is a 64×64 crop resampled so that the fingertip sits at the
//! center, the MCP→PIP direction points up, and the wrist–MCP distance
//! spans [`REFERENCE_HAND_PX`] patch pixels.

mod dataset;

use nalgebra::{Matrix2, Point2, Vector2};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::scenekit::Scene;
use crate::suppress::{ChannelMode, LedSet, SuppressedFrame};

pub use dataset::{
    read_dataset, write_dataset, Dataset, DatasetHeader, Sample, DATASET_MAGIC, DATASET_VERSION,
};

/// Patch side length in pixels.
pub const PATCH_SIZE: usize = 64;
/// Patch-space length of the wrist–MCP segment.
pub const REFERENCE_HAND_PX: f64 = 96.0;
/// Default tracker noise, pixels.
pub const DEFAULT_JITTER_PX: f64 = 1.5;

/// Image keypoints of one finger.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FingerKeypointsPx {
    pub finger_id: u8,
    pub tip: Point2<f64>,
    pub pip: Point2<f64>,
    pub mcp: Point2<f64>,
    pub wrist: Point2<f64>,
    /// False when the fingertip is off-image or any keypoint is behind the camera.
    pub in_view: bool,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct HandKeypoints {
    pub fingers: Vec<FingerKeypointsPx>,
}

impl HandKeypoints {
    pub fn finger(&self, finger_id: u8) -> Option<&FingerKeypointsPx> {
        self.fingers.iter().find(|f| f.finger_id == finger_id)
    }

    pub fn finger_ids(&self) -> Vec<u8> {
        self.fingers.iter().map(|f| f.finger_id).collect()
    }
}

/// Projects each finger's keypoints and adds isotropic Gaussian jitter of
/// `sigma_px` to every coordinate.
pub fn keypoints_from_scene<R: Rng + ?Sized>(
    scene: &Scene,
    sigma_px: f64,
    rng: &mut R,
) -> HandKeypoints {
    let noise = Normal::new(0.0, sigma_px.max(0.0)).expect("finite sigma");
    let mut jitter = |p: Point2<f64>| {
        if sigma_px > 0.0 {
            Point2::new(p.x + noise.sample(rng), p.y + noise.sample(rng))
        } else {
            p
        }
    };
    let cam = &scene.camera;
    let fingers = scene
        .fingers
        .iter()
        .map(|f| {
            let kp = &f.keypoints;
            let projected = [kp.tip, kp.pip, kp.mcp, kp.wrist].map(|p| cam.project(&p).ok());
            let in_view =
                projected.iter().all(Option::is_some) && cam.in_bounds(&projected[0].unwrap());
            let [tip, pip, mcp, wrist] =
                projected.map(|p| jitter(p.unwrap_or(Point2::new(f64::NAN, f64::NAN))));
            FingerKeypointsPx {
                finger_id: f.finger_id,
                tip,
                pip,
                mcp,
                wrist,
                in_view,
            }
        })
        .collect();
    HandKeypoints { fingers }
}

/// Similarity mapping image pixels to patch pixels:
/// `patch = scale · R · (image − tip) + center`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PatchTransform {
    pub tip: Point2<f64>,
    pub scale: f64,
    pub rotation: Matrix2<f64>,
}

impl PatchTransform {
    pub fn center() -> Point2<f64> {
        let c = (PATCH_SIZE as f64 - 1.0) * 0.5;
        Point2::new(c, c)
    }

    pub fn to_patch(&self, image: &Point2<f64>) -> Point2<f64> {
        Self::center() + self.rotation * (image - self.tip) * self.scale
    }

    pub fn to_image(&self, patch: &Point2<f64>) -> Point2<f64> {
        self.tip + self.rotation.transpose() * (patch - Self::center()) / self.scale
    }
}

/// Builds the normalizing transform for `finger_id`.
pub fn patch_transform(kp: &HandKeypoints, finger_id: u8) -> Result<PatchTransform> {
    let f = kp
        .finger(finger_id)
        .ok_or_else(|| Error::InvalidArgument(format!("no keypoints for finger {finger_id}")))?;
    let hand = (f.wrist - f.mcp).norm();
    let up: Vector2<f64> = f.pip - f.mcp;
    if !(hand > 1e-6) || !(up.norm() > 1e-6) || !f.tip.coords.iter().all(|v| v.is_finite()) {
        return Err(Error::DegenerateGeometry(format!(
            "coincident keypoints for finger {finger_id}"
        )));
    }
    // Rotate `up` onto (0, -1).
    let d = up / up.norm();
    let rotation = Matrix2::new(-d.y, d.x, -d.x, -d.y);
    Ok(PatchTransform {
        tip: f.tip,
        scale: REFERENCE_HAND_PX / hand,
        rotation,
    })
}

/// Multi-channel fingertip patch, channel-major `[c][y][x]`, values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FingerPatch {
    pub finger_id: u8,
    pub frame_index: u64,
    pub channels: usize,
    pub pixels: Vec<f32>,
}

impl FingerPatch {
    pub fn zeros(finger_id: u8, frame_index: u64, channels: usize) -> Self {
        Self {
            finger_id,
            frame_index,
            channels,
            pixels: vec![0.0; channels * PATCH_SIZE * PATCH_SIZE],
        }
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        let n = PATCH_SIZE * PATCH_SIZE;
        &self.pixels[c * n..(c + 1) * n]
    }

    pub fn get(&self, c: usize, x: usize, y: usize) -> f32 {
        self.pixels[(c * PATCH_SIZE + y) * PATCH_SIZE + x]
    }
}

/// Bilinear resampling of every channel of `frame` under `transform`;
/// samples outside the image read zero.
pub fn extract_patch(
    frame: &SuppressedFrame,
    transform: &PatchTransform,
    finger_id: u8,
) -> FingerPatch {
    let mut patch = FingerPatch::zeros(finger_id, frame.frame_index, frame.channels.len());
    let n = PATCH_SIZE * PATCH_SIZE;
    for (c, img) in frame.channels.iter().enumerate() {
        let out = &mut patch.pixels[c * n..(c + 1) * n];
        for y in 0..PATCH_SIZE {
            for x in 0..PATCH_SIZE {
                let p = transform.to_image(&Point2::new(x as f64, y as f64));
                out[y * PATCH_SIZE + x] = img.sample_bilinear(p.x, p.y).clamp(0.0, 1.0);
            }
        }
    }
    patch
}

/// Patches for every in-view finger of `kp`.
pub fn extract_all(frame: &SuppressedFrame, kp: &HandKeypoints) -> Vec<FingerPatch> {
    kp.fingers
        .iter()
        .filter(|f| f.in_view)
        .filter_map(|f| {
            patch_transform(kp, f.finger_id)
                .ok()
                .map(|t| extract_patch(frame, &t, f.finger_id))
        })
        .collect()
}

/// Number of patch channels produced by a LED set under a channel mode.
pub fn channel_count(leds: LedSet, mode: ChannelMode) -> usize {
    mode.channels(leds)
}
