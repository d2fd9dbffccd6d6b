use nalgebra::{Point3, Vector3};
use serde::{Deserialize, Serialize};

use super::camera::PinholeCamera;
use super::geometry::Plane;
use crate::error::{Error, Result};
use crate::LED_COUNT;

/// Hover at or below which a finger counts as touching.
pub const DEFAULT_CONTACT_EPSILON_MM: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Falloff {
    None,
    #[default]
    InverseSquare,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointLight {
    pub position: [f64; 3],
    pub intensity: f64,
    #[serde(default)]
    pub falloff: Falloff,
}

impl PointLight {
    pub fn new(position: Point3<f64>, intensity: f64, falloff: Falloff) -> Self {
        Self {
            position: position.coords.into(),
            intensity,
            falloff,
        }
    }

    #[inline]
    pub fn pos(&self) -> Point3<f64> {
        Point3::from(self.position)
    }
}

/// A headset illuminator; `index` is its firing-sequence step (1..=4).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeadsetLed {
    pub index: u8,
    pub light: PointLight,
}

/// Planar albedo modulation, in plane coordinates (mm).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Texture {
    Checker {
        period_mm: f64,
        contrast: f64,
    },
    Stripes {
        period_mm: f64,
        contrast: f64,
        angle_deg: f64,
    },
}

impl Texture {
    /// Multiplicative factor `1 + contrast·pattern`, pattern in [-1, 1].
    fn factor(&self, [x, y]: [f64; 2]) -> f64 {
        match *self {
            Texture::Checker {
                period_mm,
                contrast,
            } => {
                let cx = (x / period_mm).floor() as i64;
                let cy = (y / period_mm).floor() as i64;
                let s = if (cx + cy).rem_euclid(2) == 0 {
                    1.0
                } else {
                    -1.0
                };
                1.0 + contrast * s
            }
            Texture::Stripes {
                period_mm,
                contrast,
                angle_deg,
            } => {
                let (s, c) = angle_deg.to_radians().sin_cos();
                let t = x * c + y * s;
                1.0 + contrast * (std::f64::consts::TAU * t / period_mm).sin()
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Surface {
    pub plane: Plane,
    pub albedo: f64,
    pub texture: Option<Texture>,
}

impl Surface {
    pub fn albedo_at(&self, p: &Point3<f64>) -> f64 {
        match &self.texture {
            None => self.albedo,
            Some(t) => (self.albedo * t.factor(self.plane.coords(p))).clamp(0.0, 1.0),
        }
    }
}

/// Serializable finger placement. `tip` is the finger pad: the point of the
/// capsule closest to the surface.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FingerPose {
    pub finger_id: u8,
    pub tip: [f64; 3],
    /// Direction from the tip towards the knuckle.
    pub axis: [f64; 3],
    #[serde(default = "FingerPose::default_length")]
    pub length: f64,
    #[serde(default = "FingerPose::default_radius")]
    pub radius: f64,
    /// Distance from the MCP joint back to the wrist keypoint, along the axis.
    #[serde(default = "FingerPose::default_hand_length")]
    pub hand_length: f64,
}

impl FingerPose {
    pub const DEFAULT_LENGTH: f64 = 50.0;
    pub const DEFAULT_RADIUS: f64 = 8.0;
    pub const DEFAULT_HAND_LENGTH: f64 = 120.0;

    fn default_length() -> f64 {
        Self::DEFAULT_LENGTH
    }
    fn default_radius() -> f64 {
        Self::DEFAULT_RADIUS
    }
    fn default_hand_length() -> f64 {
        Self::DEFAULT_HAND_LENGTH
    }

    pub fn new(finger_id: u8, tip: Point3<f64>, axis: Vector3<f64>) -> Self {
        Self {
            finger_id,
            tip: tip.coords.into(),
            axis: axis.into(),
            length: Self::DEFAULT_LENGTH,
            radius: Self::DEFAULT_RADIUS,
            hand_length: Self::DEFAULT_HAND_LENGTH,
        }
    }

    /// Finger over a ground plane: tip pad at `(x, y, hover)`, pointing along
    /// `yaw_deg` (0 = +y), tilted `pitch_deg` up from the surface towards the knuckle.
    pub fn over_ground(
        finger_id: u8,
        x: f64,
        y: f64,
        hover: f64,
        yaw_deg: f64,
        pitch_deg: f64,
    ) -> Self {
        let (sy, cy) = yaw_deg.to_radians().sin_cos();
        let (sp, cp) = pitch_deg.to_radians().sin_cos();
        // Finger points along (sin yaw, cos yaw); the axis runs back to the knuckle.
        let axis = Vector3::new(-sy * cp, -cy * cp, sp);
        Self::new(finger_id, Point3::new(x, y, hover), axis)
    }
}

/// 3-D hand keypoints carried by a finger.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FingerKeypoints {
    pub tip: Point3<f64>,
    pub pip: Point3<f64>,
    pub mcp: Point3<f64>,
    pub wrist: Point3<f64>,
}

/// Capsule finger: hemisphere-capped cylinder between the tip sphere center
/// and the knuckle sphere center.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CapsuleFinger {
    pub finger_id: u8,
    /// Finger pad (lowest point of the tip sphere).
    pub tip: Point3<f64>,
    pub axis: Vector3<f64>,
    pub length: f64,
    pub radius: f64,
    /// Center of the distal hemisphere.
    pub tip_center: Point3<f64>,
    /// Center of the proximal hemisphere.
    pub knuckle_center: Point3<f64>,
    pub keypoints: FingerKeypoints,
}

impl CapsuleFinger {
    pub fn new(pose: &FingerPose, surface: &Plane) -> Result<Self> {
        if !(1..=5).contains(&pose.finger_id) {
            return Err(Error::InvalidScene(format!(
                "finger id {} outside 1..=5",
                pose.finger_id
            )));
        }
        if !(pose.radius > 0.0) || !(pose.length > 0.0) || !(pose.hand_length >= 0.0) {
            return Err(Error::InvalidScene(
                "finger radius and length must be positive".into(),
            ));
        }
        let axis = Vector3::from(pose.axis);
        if !(axis.norm() > 1e-9) {
            return Err(Error::InvalidScene("finger axis must be non-zero".into()));
        }
        let axis = axis.normalize();
        if axis.dot(&surface.normal) < -1e-9 {
            return Err(Error::InvalidScene(
                "finger axis must not point into the surface".into(),
            ));
        }
        let tip = Point3::from(pose.tip);
        if surface.signed_distance(&tip) < -1e-9 {
            return Err(Error::InvalidScene("fingertip below the surface".into()));
        }
        let tip_center = tip + surface.normal * pose.radius;
        let knuckle_center = tip_center + axis * pose.length;
        // The back of the hand stays level: the wrist lies behind the
        // knuckle along the axis' in-plane direction.
        let level = axis - surface.normal * axis.dot(&surface.normal);
        let back = level.try_normalize(1e-6).unwrap_or(axis);
        let keypoints = FingerKeypoints {
            tip,
            pip: tip_center + axis * (pose.length * 0.5),
            mcp: knuckle_center,
            wrist: knuckle_center + back * pose.hand_length,
        };
        Ok(Self {
            finger_id: pose.finger_id,
            tip,
            axis,
            length: pose.length,
            radius: pose.radius,
            tip_center,
            knuckle_center,
            keypoints,
        })
    }

    pub fn pose(&self) -> FingerPose {
        FingerPose {
            finger_id: self.finger_id,
            tip: self.tip.coords.into(),
            axis: self.axis.into(),
            length: self.length,
            radius: self.radius,
            hand_length: (self.keypoints.wrist - self.keypoints.mcp).norm(),
        }
    }

    /// Center and radius of a sphere enclosing the capsule.
    pub fn bounding_sphere(&self) -> (Point3<f64>, f64) {
        (
            nalgebra::center(&self.tip_center, &self.knuckle_center),
            self.length * 0.5 + self.radius,
        )
    }
}

/// Flat disk standing in for the palm in multi-finger scenes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Palm {
    pub center: [f64; 3],
    pub normal: [f64; 3],
    pub radius: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RenderSettings {
    /// Rays per pixel along each axis (n×n jittered-free grid).
    pub supersample: u32,
    /// Infrared reflectance of skin.
    pub skin_reflectance: f64,
}

impl Default for RenderSettings {
    fn default() -> Self {
        Self {
            supersample: 1,
            skin_reflectance: 0.55,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub surface: Surface,
    pub fingers: Vec<CapsuleFinger>,
    pub palm: Option<Palm>,
    pub camera: PinholeCamera,
    pub headset_leds: Vec<HeadsetLed>,
    pub ambient_lights: Vec<PointLight>,
    /// Uniform skylight irradiance added to every hit.
    pub ambient_floor: f64,
    pub render: RenderSettings,
    pub contact_epsilon: f64,
}

impl Scene {
    pub fn validate(&self) -> Result<()> {
        if self.headset_leds.is_empty() {
            return Err(Error::InvalidScene(
                "at least one headset LED is required".into(),
            ));
        }
        if self.headset_leds.len() > LED_COUNT {
            return Err(Error::InvalidScene(format!(
                "at most {LED_COUNT} headset LEDs"
            )));
        }
        let mut seen = [false; LED_COUNT + 1];
        for led in &self.headset_leds {
            let i = led.index as usize;
            if !(1..=LED_COUNT).contains(&i) {
                return Err(Error::InvalidScene(format!("LED index {i} outside 1..=4")));
            }
            if std::mem::replace(&mut seen[i], true) {
                return Err(Error::InvalidScene(format!("duplicate LED index {i}")));
            }
        }
        for light in self
            .headset_leds
            .iter()
            .map(|l| &l.light)
            .chain(&self.ambient_lights)
        {
            if !(light.intensity >= 0.0) {
                return Err(Error::InvalidScene("light intensity must be >= 0".into()));
            }
        }
        if !(self.ambient_floor >= 0.0) {
            return Err(Error::InvalidScene("ambient floor must be >= 0".into()));
        }
        if !(0.0..=1.0).contains(&self.surface.albedo) {
            return Err(Error::InvalidScene("albedo must lie in [0, 1]".into()));
        }
        if self.surface.plane.signed_distance(&self.camera.center()) <= 0.0 {
            return Err(Error::InvalidScene(
                "camera must be above the surface".into(),
            ));
        }
        if self.render.supersample == 0 {
            return Err(Error::InvalidScene("supersample must be >= 1".into()));
        }
        if self.palm.is_some_and(|p| !(p.radius > 0.0)) {
            return Err(Error::InvalidScene("palm radius must be positive".into()));
        }
        Ok(())
    }

    pub fn led(&self, index: u8) -> Option<&HeadsetLed> {
        self.headset_leds.iter().find(|l| l.index == index)
    }

    /// Same rig with a different set of fingers.
    pub fn with_fingers(&self, poses: &[FingerPose]) -> Result<Scene> {
        let fingers = poses
            .iter()
            .map(|p| CapsuleFinger::new(p, &self.surface.plane))
            .collect::<Result<Vec<_>>>()?;
        Ok(Scene {
            fingers,
            ..self.clone()
        })
    }

    /// Whether a segment from `from` towards `to` is blocked by an occluder.
    pub(crate) fn occluded(&self, from: &Point3<f64>, to: &Point3<f64>) -> bool {
        let delta = to - from;
        let dist = delta.norm();
        let ray = super::geometry::Ray::new(*from, delta);
        self.first_occluder_hit(&ray, 1e-6)
            .is_some_and(|(t, _)| t < dist - 1e-6)
    }

    /// Nearest hit among fingers and palm.
    pub(crate) fn first_occluder_hit(
        &self,
        ray: &super::geometry::Ray,
        t_min: f64,
    ) -> Option<(f64, Vector3<f64>)> {
        let mut best: Option<(f64, Vector3<f64>)> = None;
        for f in &self.fingers {
            let (c, r) = f.bounding_sphere();
            let oc = ray.origin - c;
            let b = oc.dot(&ray.dir);
            if b * b - (oc.norm_squared() - r * r) < 0.0 {
                continue;
            }
            if let Some(hit) =
                super::geometry::ray_capsule(ray, &f.tip_center, &f.knuckle_center, f.radius, t_min)
            {
                if best.is_none_or(|(t, _)| hit.0 < t) {
                    best = Some(hit);
                }
            }
        }
        if let Some(p) = &self.palm {
            let hit = super::geometry::ray_disk(
                ray,
                &Point3::from(p.center),
                &Vector3::from(p.normal).normalize(),
                p.radius,
                t_min,
            );
            if let Some(hit) = hit {
                if best.is_none_or(|(t, _)| hit.0 < t) {
                    best = Some(hit);
                }
            }
        }
        best
    }
}
