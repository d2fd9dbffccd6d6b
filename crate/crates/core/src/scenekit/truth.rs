use nalgebra::{Point2, Vector2};
use serde::{Deserialize, Serialize};

use super::render::project_in_view;
use super::scene::Scene;
use super::shadow::{analytic_shadow_tip, shadow_search_direction};
use crate::LED_COUNT;

/// Labels for one finger.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FingerTruth {
    pub finger_id: u8,
    pub hover_mm: f64,
    pub touch: bool,
    /// Projected keypoints; `None` when behind the camera or off-image.
    pub tip_px: Option<Point2<f64>>,
    pub pip_px: Option<Point2<f64>>,
    pub mcp_px: Option<Point2<f64>>,
    pub wrist_px: Option<Point2<f64>>,
    /// Analytic shadow tip per LED (index − 1), when visible.
    pub shadow_tips: [Option<Point2<f64>>; LED_COUNT],
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct GroundTruth {
    pub fingers: Vec<FingerTruth>,
}

impl GroundTruth {
    pub fn finger(&self, finger_id: u8) -> Option<&FingerTruth> {
        self.fingers.iter().find(|f| f.finger_id == finger_id)
    }
}

pub fn ground_truth(scene: &Scene) -> GroundTruth {
    let plane = &scene.surface.plane;
    let fingers = scene
        .fingers
        .iter()
        .map(|f| {
            let hover_mm = plane.signed_distance(&f.tip);
            let kp = &f.keypoints;
            let tip_px = project_in_view(scene, &kp.tip);
            let pip_px = project_in_view(scene, &kp.pip);
            let mut shadow_tips = [None; LED_COUNT];
            if let (Some(tip), Some(pip)) = (tip_px, pip_px) {
                let axis: Vector2<f64> = tip - pip;
                for led in &scene.headset_leds {
                    let l = led.light.pos();
                    let dir = shadow_search_direction(&scene.camera, plane, &l, &tip, &axis);
                    shadow_tips[led.index as usize - 1] = analytic_shadow_tip(scene, f, &l, &dir);
                }
            }
            FingerTruth {
                finger_id: f.finger_id,
                hover_mm,
                touch: hover_mm <= scene.contact_epsilon,
                tip_px,
                pip_px,
                mcp_px: project_in_view(scene, &kp.mcp),
                wrist_px: project_in_view(scene, &kp.wrist),
                shadow_tips,
            }
        })
        .collect();
    GroundTruth { fingers }
}
