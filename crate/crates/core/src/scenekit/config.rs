//! TOML scene description. Every field is optional; omitted fields take the
//! default headset rig. Units are millimetres.

use std::path::Path;

use nalgebra::{Point3, Vector3};
use serde::{Deserialize, Serialize};

use super::camera::PinholeCamera;
use super::geometry::Plane;
use super::scene::{
    CapsuleFinger, Falloff, FingerPose, HeadsetLed, Palm, PointLight, RenderSettings, Scene,
    Surface, Texture, DEFAULT_CONTACT_EPSILON_MM,
};
use crate::error::{Error, Result};
use crate::{FRAME_HEIGHT, FRAME_WIDTH};

/// Radiant intensity of a default headset LED. Irradiance is expressed in
/// sensor LSB at unit gain, so a white surface ~470 mm away reads ~200.
pub const DEFAULT_LED_INTENSITY: f64 = 5.5e7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SurfaceConfig {
    pub origin: [f64; 3],
    pub normal: [f64; 3],
    pub albedo: f64,
    pub texture: Option<Texture>,
}

impl Default for SurfaceConfig {
    fn default() -> Self {
        Self {
            origin: [0.0; 3],
            normal: [0.0, 0.0, 1.0],
            albedo: 0.6,
            texture: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CameraConfig {
    pub eye: [f64; 3],
    pub target: [f64; 3],
    pub up: [f64; 3],
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl Default for CameraConfig {
    fn default() -> Self {
        Self {
            eye: [0.0, 0.0, 380.0],
            target: [0.0, 280.0, 0.0],
            up: [0.0, 0.0, 1.0],
            fx: 600.0,
            fy: 600.0,
            cx: 319.5,
            cy: 239.5,
            width: FRAME_WIDTH,
            height: FRAME_HEIGHT,
        }
    }
}

impl CameraConfig {
    pub fn build(&self) -> Result<PinholeCamera> {
        PinholeCamera::look_at(
            Point3::from(self.eye),
            Point3::from(self.target),
            Vector3::from(self.up),
            [self.fx, self.fy, self.cx, self.cy],
            self.width,
            self.height,
        )
    }
}

/// A headset LED placed relative to the camera, in the camera frame
/// (x right, y down, z forward).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LedConfig {
    pub index: u8,
    pub offset: [f64; 3],
    #[serde(default = "default_led_intensity")]
    pub intensity: f64,
    #[serde(default)]
    pub falloff: Falloff,
}

fn default_led_intensity() -> f64 {
    DEFAULT_LED_INTENSITY
}

impl LedConfig {
    /// Four LEDs on the corners of a 160×100 mm rectangle with the camera at
    /// the lower-left corner; LED 1 sits just above the camera.
    pub fn default_rig() -> Vec<LedConfig> {
        [
            (1, [0.0, -12.0, 0.0]),
            (2, [0.0, -100.0, 0.0]),
            (3, [160.0, 0.0, 0.0]),
            (4, [160.0, -100.0, 0.0]),
        ]
        .into_iter()
        .map(|(index, offset)| LedConfig {
            index,
            offset,
            intensity: DEFAULT_LED_INTENSITY,
            falloff: Falloff::InverseSquare,
        })
        .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneConfig {
    pub contact_epsilon_mm: f64,
    pub ambient_floor: f64,
    pub surface: SurfaceConfig,
    pub camera: CameraConfig,
    pub leds: Vec<LedConfig>,
    pub ambient_lights: Vec<PointLight>,
    pub fingers: Vec<FingerPose>,
    pub palm: Option<Palm>,
    pub render: RenderSettings,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            contact_epsilon_mm: DEFAULT_CONTACT_EPSILON_MM,
            ambient_floor: 0.0,
            surface: SurfaceConfig::default(),
            camera: CameraConfig::default(),
            leds: LedConfig::default_rig(),
            ambient_lights: Vec::new(),
            fingers: Vec::new(),
            palm: None,
            render: RenderSettings::default(),
        }
    }
}

impl SceneConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::InvalidScene(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("scene config serializes")
    }

    pub fn build(&self) -> Result<Scene> {
        let plane = Plane::new(
            Point3::from(self.surface.origin),
            Vector3::from(self.surface.normal),
        )?;
        let camera = self.camera.build()?;
        let cam_center = camera.center();
        let headset_leds = self
            .leds
            .iter()
            .map(|l| HeadsetLed {
                index: l.index,
                light: PointLight::new(
                    cam_center + camera.axis_world(Vector3::from(l.offset)),
                    l.intensity,
                    l.falloff,
                ),
            })
            .collect();
        let fingers = self
            .fingers
            .iter()
            .map(|p| CapsuleFinger::new(p, &plane))
            .collect::<Result<Vec<_>>>()?;
        let scene = Scene {
            surface: Surface {
                plane,
                albedo: self.surface.albedo,
                texture: self.surface.texture,
            },
            fingers,
            palm: self.palm,
            camera,
            headset_leds,
            ambient_lights: self.ambient_lights.clone(),
            ambient_floor: self.ambient_floor,
            render: self.render,
            contact_epsilon: self.contact_epsilon_mm,
        };
        scene.validate()?;
        Ok(scene)
    }
}

impl Scene {
    /// Default headset rig over a plain surface, no fingers.
    pub fn default_rig() -> Scene {
        SceneConfig::default()
            .build()
            .expect("default rig is valid")
    }
}
