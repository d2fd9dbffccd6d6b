//! The frozen benchmark scene suite.
//!
//! Episodes cycle through six surface materials and two ambient lighting
//! setups. Each episode places up to three fingers in separate lanes and
//! records a few frames with small pose changes and hover heights drawn
//! from a touch/hover mixture.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::patches::{keypoints_from_scene, HandKeypoints, DEFAULT_JITTER_PX};
use crate::scenekit::{
    render_sequence, FingerPose, GroundTruth, NoiseModel, PointLight, Scene, SensorModel, Texture,
};
use crate::streamio::{frame_rng, CompositeFrame};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Material {
    pub name: &'static str,
    pub albedo: f64,
    pub texture: Option<Texture>,
}

pub const MATERIALS: [Material; 6] = [
    Material {
        name: "slate",
        albedo: 0.15,
        texture: None,
    },
    Material {
        name: "walnut",
        albedo: 0.3,
        texture: None,
    },
    Material {
        name: "tiles",
        albedo: 0.45,
        texture: Some(Texture::Checker {
            period_mm: 25.0,
            contrast: 0.4,
        }),
    },
    Material {
        name: "oak",
        albedo: 0.6,
        texture: None,
    },
    Material {
        name: "laminate",
        albedo: 0.75,
        texture: None,
    },
    Material {
        name: "card",
        albedo: 0.9,
        texture: None,
    },
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AmbientSetup {
    /// Two ceiling lamps casting strong, crossing shadows.
    OverheadLamps,
    /// One bright low-angle source and diffuse fill.
    Window,
}

pub const AMBIENT_SETUPS: [AmbientSetup; 2] = [AmbientSetup::OverheadLamps, AmbientSetup::Window];

impl AmbientSetup {
    /// Ambient point lights and floor irradiance.
    pub fn lights(self) -> (Vec<PointLight>, f64) {
        use crate::scenekit::Falloff::InverseSquare;
        match self {
            AmbientSetup::OverheadLamps => (
                vec![
                    PointLight {
                        position: [400.0, 500.0, 1000.0],
                        intensity: 4.0e7,
                        falloff: InverseSquare,
                    },
                    PointLight {
                        position: [-350.0, 150.0, 900.0],
                        intensity: 3.0e7,
                        falloff: InverseSquare,
                    },
                ],
                4.0,
            ),
            AmbientSetup::Window => (
                vec![PointLight {
                    position: [-900.0, 600.0, 500.0],
                    intensity: 1.2e8,
                    falloff: InverseSquare,
                }],
                12.0,
            ),
        }
    }
}

/// Capsule radius and length per finger id (thumb first).
pub const FINGER_DIMS: [(f64, f64); 5] = [
    (9.5, 40.0),
    (8.5, 50.0),
    (8.5, 55.0),
    (8.0, 50.0),
    (7.0, 42.0),
];

/// Suite parameters. Everything is derived from `seed`, so a spec names a
/// fixed set of scenes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SuiteSpec {
    pub name: String,
    pub episodes: usize,
    pub frames_per_episode: usize,
    /// Every `test_every`-th block of twelve episodes (one per
    /// material × ambient pair) is held out.
    pub test_every: usize,
    pub seed: u64,
    pub jitter_px: f64,
    /// Gaussian read noise in LSB; 0 disables noise.
    pub read_noise: f64,
    pub gain: f64,
    /// Fingers per rendered frame (1..=3), each in its own lane.
    pub fingers_per_frame: usize,
    /// Tracker draws per training frame; each gives a differently
    /// jittered crop of the same render.
    pub train_crops: usize,
    /// Probability of a touching sample.
    pub touch_fraction: f64,
    /// Probability of a hover in (0.5, 10] mm; the rest is uniform in (0.5, 100].
    pub near_fraction: f64,
}

impl Default for SuiteSpec {
    fn default() -> Self {
        Self::default_suite()
    }
}

const BLOCK: usize = MATERIALS.len() * AMBIENT_SETUPS.len();

impl SuiteSpec {
    pub fn default_suite() -> Self {
        Self {
            name: "default".into(),
            episodes: 240,
            frames_per_episode: 10,
            test_every: 4,
            seed: 0x5eed_0001,
            jitter_px: DEFAULT_JITTER_PX,
            read_noise: 1.0,
            gain: 0.75,
            fingers_per_frame: 3,
            train_crops: 2,
            touch_fraction: 0.45,
            near_fraction: 0.10,
        }
    }

    /// A few dozen samples, for tests and quick checks.
    pub fn smoke() -> Self {
        Self {
            name: "smoke".into(),
            episodes: 24,
            frames_per_episode: 3,
            test_every: 2,
            ..Self::default_suite()
        }
    }

    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "default" => Ok(Self::default_suite()),
            "smoke" => Ok(Self::smoke()),
            other => Err(Error::InvalidArgument(format!(
                "unknown suite {other:?} (expected default or smoke)"
            ))),
        }
    }

    /// Rendered frames.
    pub fn len(&self) -> usize {
        self.episodes * self.frames_per_episode
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn material(&self, episode: usize) -> Material {
        MATERIALS[episode % MATERIALS.len()]
    }

    pub fn ambient(&self, episode: usize) -> AmbientSetup {
        AMBIENT_SETUPS[(episode / MATERIALS.len()) % AMBIENT_SETUPS.len()]
    }

    pub fn is_test(&self, episode: usize) -> bool {
        let every = self.test_every.max(1);
        every > 1 && (episode / BLOCK) % every == every - 1
    }

    pub fn sensor(&self) -> SensorModel {
        let mut s = SensorModel::noiseless();
        s.gain = self.gain;
        if self.read_noise > 0.0 {
            s.noise = Some(NoiseModel {
                read_sigma: self.read_noise,
                shot: false,
            });
        }
        s
    }

    /// Rig for an episode: default headset over the episode's material and lighting.
    pub fn rig(&self, episode: usize) -> Scene {
        let mut rig = Scene::default_rig();
        let m = self.material(episode);
        rig.surface.albedo = m.albedo;
        rig.surface.texture = m.texture;
        let (lights, floor) = self.ambient(episode).lights();
        rig.ambient_lights = lights;
        rig.ambient_floor = floor;
        rig
    }

    fn hover<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.random();
        if u < self.touch_fraction {
            rng.random_range(0.0..0.3)
        } else if u < self.touch_fraction + self.near_fraction {
            rng.random_range(0.5..10.0)
        } else {
            rng.random_range(0.5..100.0)
        }
    }

    fn finger_pose<R: Rng + ?Sized>(&self, base: &BasePose, rng: &mut R) -> FingerPose {
        let n4 = Normal::new(0.0, 4.0).expect("finite");
        let n3 = Normal::new(0.0, 3.0).expect("finite");
        let x = base.x + n4.sample(rng);
        let y = base.y + n4.sample(rng);
        let yaw = base.yaw + n4.sample(rng);
        let pitch = (base.pitch + n3.sample(rng)).clamp(12.0, 55.0);
        let mut pose = FingerPose::over_ground(base.finger_id, x, y, self.hover(rng), yaw, pitch);
        let (radius, length) = FINGER_DIMS[base.finger_id as usize - 1];
        pose.radius = radius;
        pose.length = length;
        pose
    }

    /// Scenes of every sample, in order.
    pub fn samples(&self) -> Result<Vec<SuiteSample>> {
        let n = self.fingers_per_frame;
        if !(1..=LANES.len()).contains(&n) {
            return Err(Error::InvalidArgument(format!(
                "fingers per frame must be 1..={}",
                LANES.len()
            )));
        }
        let mut out = Vec::with_capacity(self.len());
        for episode in 0..self.episodes {
            let rig = self.rig(episode);
            let mut rng = frame_rng(self.seed, episode as u64);
            let mut ids: Vec<u8> = (1..=5).collect();
            ids.shuffle(&mut rng);
            // Spread the fingers over lanes across the view.
            let lanes: &[f64] = if n == 1 { &[0.0] } else { &LANES[..n] };
            let bases: Vec<BasePose> = lanes
                .iter()
                .zip(&ids)
                .map(|(&lane, &finger_id)| BasePose {
                    finger_id,
                    x: lane + rng.random_range(-20.0..20.0) * if n == 1 { 3.5 } else { 1.0 },
                    y: rng.random_range(215.0..335.0),
                    yaw: rng.random_range(-35.0..35.0),
                    pitch: rng.random_range(18.0..45.0),
                })
                .collect();
            for frame in 0..self.frames_per_episode {
                let mut tries = 0;
                let scene = loop {
                    let poses: Vec<FingerPose> = bases
                        .iter()
                        .map(|b| self.finger_pose(b, &mut rng))
                        .collect();
                    let scene = rig.with_fingers(&poses)?;
                    let visible = scene.fingers.iter().all(|f| {
                        scene
                            .camera
                            .project(&f.keypoints.tip)
                            .is_ok_and(|p| scene.camera.in_bounds(&p))
                    });
                    if visible {
                        break scene;
                    }
                    tries += 1;
                    if tries > 100 {
                        return Err(Error::InvalidScene(format!(
                            "episode {episode}: no visible pose"
                        )));
                    }
                };
                out.push(SuiteSample {
                    scene_id: episode as u32,
                    index: (episode * self.frames_per_episode + frame) as u64,
                    test: self.is_test(episode),
                    scene,
                });
            }
        }
        Ok(out)
    }

    /// Renders a sample and runs the stand-in tracker on it.
    pub fn render(&self, sample: &SuiteSample) -> (CompositeFrame, GroundTruth, HandKeypoints) {
        let mut rng = frame_rng(self.seed ^ 0x7265_6e64, sample.index);
        let (frame, truth) =
            render_sequence(&sample.scene, &self.sensor(), sample.index, 0, &mut rng);
        let kp = keypoints_from_scene(&sample.scene, self.jitter_px, &mut rng);
        (frame, truth, kp)
    }

    /// Further tracker draws for the same scene, used as training crops.
    pub fn extra_keypoints(&self, sample: &SuiteSample) -> Vec<HandKeypoints> {
        let mut rng = frame_rng(self.seed ^ 0x6372_6f70, sample.index);
        (1..self.train_crops.max(1))
            .map(|_| keypoints_from_scene(&sample.scene, self.jitter_px, &mut rng))
            .collect()
    }
}

/// Lateral lane centers (mm) for multi-finger frames.
const LANES: [f64; 3] = [-110.0, 0.0, 110.0];

struct BasePose {
    finger_id: u8,
    x: f64,
    y: f64,
    yaw: f64,
    pitch: f64,
}

#[derive(Debug, Clone)]
pub struct SuiteSample {
    pub scene_id: u32,
    pub index: u64,
    pub test: bool,
    pub scene: Scene,
}
