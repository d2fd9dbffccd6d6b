//! Synthetic raw streams rendered from finger trajectories.
//!
//! Trajectory files are JSON:
//!
//! ```json
//! { "frames": [ { "fingers": [ { "finger_id": 2, "tip": [0, 280, 12], "axis": [0, -0.87, 0.5] } ] } ] }
//! ```
//!
//! Finger fields follow [`FingerPose`]; `length`, `radius` and `hand_length`
//! are optional.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::frame::RawSubframe;
use crate::error::{Error, Result};
use crate::scenekit::{
    render_sequence, FingerPose, GroundTruth, Scene, SensorModel, SUBFRAME_SPACING_US,
};
use crate::STEPS_PER_SEQUENCE;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct TrajectoryFrame {
    pub fingers: Vec<FingerPose>,
}

/// Finger poses per composite frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct Trajectory {
    pub frames: Vec<TrajectoryFrame>,
}

impl Trajectory {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::InvalidTrajectory(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| Error::InvalidTrajectory(e.to_string()))?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// One finger following the given hover heights (mm) above its base pose.
    pub fn from_heights(base: &FingerPose, heights: &[f64]) -> Self {
        let frames = heights
            .iter()
            .map(|&h| {
                let mut p = *base;
                p.tip[2] = base.tip[2] + h;
                TrajectoryFrame { fingers: vec![p] }
            })
            .collect();
        Self { frames }
    }

    /// Tap cycles: descend from `max_hover` to contact over `approach`
    /// frames, rest on the surface for `contact` frames, then lift back.
    pub fn tap_heights(cycles: usize, approach: usize, contact: usize, max_hover: f64) -> Vec<f64> {
        let mut h = Vec::new();
        for _ in 0..cycles {
            h.extend((0..approach).map(|i| max_hover * (1.0 - i as f64 / approach as f64)));
            h.extend(std::iter::repeat_n(0.0, contact));
            h.extend((1..=approach).map(|i| max_hover * i as f64 / approach as f64));
        }
        h
    }

    /// Smooth oscillation between `low` and `high` without contact.
    pub fn hover_heights(frames: usize, low: f64, high: f64, period: usize) -> Vec<f64> {
        (0..frames)
            .map(|i| {
                let phase = std::f64::consts::TAU * i as f64 / period.max(1) as f64;
                low + (high - low) * 0.5 * (1.0 - phase.cos())
            })
            .collect()
    }

    /// Checks the trajectory against a rig: non-empty, unique finger ids
    /// per frame, every pose valid over the rig's surface.
    pub fn validate(&self, rig: &Scene) -> Result<()> {
        if self.frames.is_empty() {
            return Err(Error::InvalidTrajectory("no frames".into()));
        }
        for (i, f) in self.frames.iter().enumerate() {
            let mut ids: Vec<u8> = f.fingers.iter().map(|p| p.finger_id).collect();
            ids.sort_unstable();
            if ids.windows(2).any(|w| w[0] == w[1]) {
                return Err(Error::InvalidTrajectory(format!(
                    "frame {i}: duplicate finger id"
                )));
            }
            rig.with_fingers(&f.fingers)
                .map_err(|e| Error::InvalidTrajectory(format!("frame {i}: {e}")))?;
        }
        Ok(())
    }

    /// Scene for composite frame `i`.
    pub fn scene_at(&self, rig: &Scene, i: usize) -> Result<Scene> {
        let f = self
            .frames
            .get(i)
            .ok_or_else(|| Error::InvalidTrajectory(format!("frame {i} out of range")))?;
        rig.with_fingers(&f.fingers)
            .map_err(|e| Error::InvalidTrajectory(format!("frame {i}: {e}")))
    }
}

/// Per-frame noise stream: identical for a given `(seed, frame)` regardless
/// of how many frames are rendered.
pub(crate) fn frame_rng(seed: u64, frame: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(frame);
    rng
}

/// Renders each trajectory frame as a full firing sequence (5 subframes,
/// 2.5 ms apart; composite `i` starts at `i · 12.5 ms`).
pub fn synthesize_raw_stream(
    rig: &Scene,
    trajectory: &Trajectory,
    sensor: &SensorModel,
    seed: u64,
) -> Result<(Vec<RawSubframe>, Vec<GroundTruth>)> {
    trajectory.validate(rig)?;
    let period = SUBFRAME_SPACING_US * STEPS_PER_SEQUENCE as u64;
    let mut raw = Vec::with_capacity(trajectory.len() * STEPS_PER_SEQUENCE);
    let mut truth = Vec::with_capacity(trajectory.len());
    for i in 0..trajectory.len() {
        let scene = trajectory.scene_at(rig, i)?;
        let mut rng = frame_rng(seed, i as u64);
        let (frame, gt) = render_sequence(&scene, sensor, i as u64, i as u64 * period, &mut rng);
        raw.extend(frame.into_subframes());
        truth.push(gt);
    }
    Ok((raw, truth))
}
