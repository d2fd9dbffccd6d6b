//! Ray-cast renderer.
//!
//! Each camera ray finds the first surface (plane, finger or palm); every
//! light then contributes `reflectance · intensity · cos · falloff · visibility`.
//! Contributions are kept per light so any set of lights can be summed from
//! one traversal, which makes images exactly additive in their light sets.

use nalgebra::{Matrix3, Point2, Point3, Vector3};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::geometry::Ray;
use super::scene::{Falloff, PointLight, Scene};
use super::truth::{ground_truth, GroundTruth};
use crate::image::{GrayImage, Image};
use crate::streamio::{CompositeFrame, RawSubframe};
use crate::{LED_COUNT, STEPS_PER_SEQUENCE};

/// Time between consecutive firing-sequence steps.
pub const SUBFRAME_SPACING_US: u64 = 2_500;

/// A set of lights to render: optionally the ambient set (ambient point
/// lights plus the uniform floor) and any headset LEDs by index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct LightSet {
    pub ambient: bool,
    /// Bit `k-1` selects LED `k`.
    pub leds: u8,
}

impl LightSet {
    pub const EMPTY: LightSet = LightSet {
        ambient: false,
        leds: 0,
    };
    pub const AMBIENT: LightSet = LightSet {
        ambient: true,
        leds: 0,
    };

    pub fn led(index: u8) -> Self {
        Self {
            ambient: false,
            leds: 1 << (index - 1),
        }
    }

    pub fn ambient_plus(index: u8) -> Self {
        Self {
            ambient: true,
            leds: 1 << (index - 1),
        }
    }

    pub fn leds(indices: &[u8]) -> Self {
        Self {
            ambient: false,
            leds: indices.iter().fold(0, |m, &i| m | (1 << (i - 1))),
        }
    }

    pub fn union(self, other: LightSet) -> Self {
        Self {
            ambient: self.ambient || other.ambient,
            leds: self.leds | other.leds,
        }
    }

    pub fn has_led(&self, index: u8) -> bool {
        self.leds & (1 << (index - 1)) != 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    /// Gaussian read noise, in LSB.
    pub read_sigma: f64,
    /// Signal-dependent shot noise (Gaussian with variance equal to the signal).
    pub shot: bool,
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self {
            read_sigma: 1.0,
            shot: false,
        }
    }
}

/// Linear irradiance → 8-bit conversion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensorModel {
    pub gain: f64,
    /// Exposure time; gain is expressed relative to the nominal 2.4 ms.
    pub exposure_ms: f64,
    pub noise: Option<NoiseModel>,
}

impl SensorModel {
    pub const NOMINAL_EXPOSURE_MS: f64 = 2.4;

    pub fn noiseless() -> Self {
        Self {
            gain: 1.0,
            exposure_ms: Self::NOMINAL_EXPOSURE_MS,
            noise: None,
        }
    }

    pub fn with_noise(noise: NoiseModel) -> Self {
        Self {
            noise: Some(noise),
            ..Self::noiseless()
        }
    }

    pub fn effective_gain(&self) -> f64 {
        self.gain * self.exposure_ms / Self::NOMINAL_EXPOSURE_MS
    }
}

impl Default for SensorModel {
    fn default() -> Self {
        Self::noiseless()
    }
}

/// Precomputed camera-ray generator.
struct RayGen {
    origin: Point3<f64>,
    cam_to_world: Matrix3<f64>,
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
}

impl RayGen {
    fn new(scene: &Scene) -> Self {
        let cam = &scene.camera;
        let inv = cam.pose.inverse();
        Self {
            origin: inv * Point3::origin(),
            cam_to_world: *inv.rotation.to_rotation_matrix().matrix(),
            fx: cam.fx,
            fy: cam.fy,
            cx: cam.cx,
            cy: cam.cy,
        }
    }

    #[inline]
    fn ray(&self, x: f64, y: f64) -> Ray {
        let d = Vector3::new((x - self.cx) / self.fx, (y - self.cy) / self.fy, 1.0);
        Ray::new(self.origin, self.cam_to_world * d)
    }
}

/// Lights in contribution order: ambient floor, ambient point lights, LEDs 1..=4.
struct LightTable<'a> {
    ambient: &'a [PointLight],
    /// LED light by index-1, if present.
    leds: [Option<&'a PointLight>; LED_COUNT],
}

impl<'a> LightTable<'a> {
    fn new(scene: &'a Scene) -> Self {
        let mut leds = [None; LED_COUNT];
        for led in &scene.headset_leds {
            leds[led.index as usize - 1] = Some(&led.light);
        }
        Self {
            ambient: &scene.ambient_lights,
            leds,
        }
    }
}

#[inline]
fn contribution(
    scene: &Scene,
    light: &PointLight,
    hit: &Point3<f64>,
    normal: &Vector3<f64>,
    reflectance: f64,
) -> f64 {
    if light.intensity == 0.0 {
        return 0.0;
    }
    let l = light.pos();
    let v = l - hit;
    let d2 = v.norm_squared();
    let d = d2.sqrt();
    let cos = normal.dot(&v) / d;
    if cos <= 0.0 {
        return 0.0;
    }
    let origin = hit + normal * 1e-4;
    if scene.occluded(&origin, &l) {
        return 0.0;
    }
    let falloff = match light.falloff {
        Falloff::None => 1.0,
        Falloff::InverseSquare => 1.0 / d2,
    };
    reflectance * light.intensity * cos * falloff
}

/// Per-light radiance for one camera ray: `[ambient, led1, .., led4]`,
/// where `ambient` sums the floor and all ambient point lights.
#[inline]
fn trace(
    scene: &Scene,
    lights: &LightTable,
    ray: &Ray,
    need_ambient: bool,
    led_mask: u8,
) -> [f64; 5] {
    let mut out = [0.0; STEPS_PER_SEQUENCE];
    let plane_t = scene.surface.plane.intersect(ray);
    let occ = scene.first_occluder_hit(ray, 1e-9);
    let (hit, normal, reflectance) = match (plane_t, occ) {
        (_, Some((t, n))) if plane_t.is_none_or(|pt| t < pt) => {
            (ray.at(t), n, scene.render.skin_reflectance)
        }
        (Some(t), _) => {
            let p = ray.at(t);
            (p, scene.surface.plane.normal, scene.surface.albedo_at(&p))
        }
        _ => return out,
    };
    if need_ambient {
        let mut a = reflectance * scene.ambient_floor;
        for light in lights.ambient {
            a += contribution(scene, light, &hit, &normal, reflectance);
        }
        out[0] = a;
    }
    for (k, led) in lights.leds.iter().enumerate() {
        if led_mask & (1 << k) != 0 {
            if let Some(light) = led {
                out[k + 1] = contribution(scene, light, &hit, &normal, reflectance);
            }
        }
    }
    out
}

/// Renders several light sets from a single traversal of the scene.
pub fn render_layers(scene: &Scene, layers: &[LightSet]) -> Vec<Image<f32>> {
    let (w, h) = (scene.camera.width, scene.camera.height);
    let need_ambient = layers.iter().any(|l| l.ambient);
    let led_mask = layers.iter().fold(0u8, |m, l| m | l.leds);
    let gen = RayGen::new(scene);
    let lights = LightTable::new(scene);
    let n = scene.render.supersample.max(1) as usize;
    let inv_samples = 1.0 / (n * n) as f64;
    let nl = layers.len();

    let mut buf = vec![0f32; w * h * nl];
    buf.par_chunks_mut(w * nl).enumerate().for_each(|(y, row)| {
        for x in 0..w {
            let mut acc = [0f64; STEPS_PER_SEQUENCE];
            for sy in 0..n {
                for sx in 0..n {
                    let px = x as f64 + (sx as f64 + 0.5) / n as f64 - 0.5;
                    let py = y as f64 + (sy as f64 + 0.5) / n as f64 - 0.5;
                    let per_light = trace(scene, &lights, &gen.ray(px, py), need_ambient, led_mask);
                    for (a, v) in acc.iter_mut().zip(per_light) {
                        *a += v;
                    }
                }
            }
            for (li, layer) in layers.iter().enumerate() {
                let mut v = if layer.ambient { acc[0] } else { 0.0 };
                for k in 0..LED_COUNT {
                    if layer.leds & (1 << k) != 0 {
                        v += acc[k + 1];
                    }
                }
                row[x * nl + li] = (v * inv_samples) as f32;
            }
        }
    });

    (0..nl)
        .map(|li| {
            let px = buf.iter().skip(li).step_by(nl).copied().collect();
            Image::from_vec(w, h, px).expect("sized")
        })
        .collect()
}

/// Linear irradiance image for the given lights. An empty set yields the
/// black image; the ambient set includes the uniform floor.
pub fn render_subframe(scene: &Scene, lights: LightSet) -> Image<f32> {
    render_layers(scene, &[lights]).pop().expect("one layer")
}

/// Applies exposure gain and optional noise, then rounds and clamps to 8 bits.
pub fn quantize<R: Rng + ?Sized>(
    linear: &Image<f32>,
    sensor: &SensorModel,
    rng: &mut R,
) -> GrayImage {
    let gain = sensor.effective_gain();
    match sensor.noise {
        None => linear.map(|&v| (v as f64 * gain).round().clamp(0.0, 255.0) as u8),
        Some(noise) => {
            let px = linear
                .pixels()
                .iter()
                .map(|&v| {
                    let signal = v as f64 * gain;
                    let mut var = noise.read_sigma * noise.read_sigma;
                    if noise.shot {
                        var += signal.max(0.0);
                    }
                    let z: f64 = StandardNormal.sample(rng);
                    (signal + z * var.sqrt()).round().clamp(0.0, 255.0) as u8
                })
                .collect();
            Image::from_vec(linear.width(), linear.height(), px).expect("sized")
        }
    }
}

/// Renders one firing sequence: ambient only, then ambient + LED k for
/// k = 1..=4, spaced [`SUBFRAME_SPACING_US`] apart from `base_timestamp_us`.
/// Steps for LEDs missing from the scene render ambient only.
pub fn render_sequence<R: Rng + ?Sized>(
    scene: &Scene,
    sensor: &SensorModel,
    frame_index: u64,
    base_timestamp_us: u64,
    rng: &mut R,
) -> (CompositeFrame, GroundTruth) {
    let layers: Vec<LightSet> = std::iter::once(LightSet::AMBIENT)
        .chain((1..=LED_COUNT as u8).map(LightSet::ambient_plus))
        .collect();
    let linear = render_layers(scene, &layers);
    let subframes = linear
        .iter()
        .enumerate()
        .map(|(step, img)| RawSubframe {
            timestamp_us: base_timestamp_us + step as u64 * SUBFRAME_SPACING_US,
            sequence_step: step as u8,
            image: quantize(img, sensor, rng),
        })
        .collect::<Vec<_>>();
    let frame = CompositeFrame::from_subframes(frame_index, subframes).expect("five ordered steps");
    (frame, ground_truth(scene))
}

/// Pixel coordinates of a world point, if it projects inside the image.
pub(crate) fn project_in_view(scene: &Scene, p: &Point3<f64>) -> Option<Point2<f64>> {
    scene
        .camera
        .project(p)
        .ok()
        .filter(|px| scene.camera.in_bounds(px))
}
