//! Shadow geometry on the surface plane.
//!
//! The point-light/point-fingertip relations are closed form: with hover
//! `h`, light height `Lz` and in-plane light–fingertip distance `D`, the
//! shadow tip lies `d = h·D / (Lz − h)` beyond the fingertip's foot point,
//! and `h = d·Lz / (d + D)` inverts it. Finite fingers cast the shadow of a
//! sphere, whose outline is the tangent cone from the light cut by the plane.

use nalgebra::{Point2, Point3, Vector2, Vector3};

use super::camera::PinholeCamera;
use super::geometry::Plane;
use super::scene::{CapsuleFinger, Scene};
use crate::error::{Error, Result};

/// Where the ray from `light` through `fingertip` meets the plane.
pub fn shadow_tip_on_plane(
    light: &Point3<f64>,
    fingertip: &Point3<f64>,
    plane: &Plane,
) -> Result<Point3<f64>> {
    let hl = plane.signed_distance(light);
    let hf = plane.signed_distance(fingertip);
    if !(hl > hf) || hl - hf < 1e-12 {
        return Err(Error::DegenerateGeometry(format!(
            "light height {hl:.3} mm not above fingertip height {hf:.3} mm"
        )));
    }
    let t = hl / (hl - hf);
    let mut s = light + (fingertip - light) * t;
    // Snap exactly onto the plane.
    s -= plane.normal * plane.signed_distance(&s);
    Ok(s)
}

/// Shadow gap on the plane for hover `h` under a light `light_height` above
/// the plane and `lateral` mm away from the fingertip's foot point.
pub fn gap_from_hover(h: f64, light_height: f64, lateral: f64) -> Result<f64> {
    if !(light_height > h) {
        return Err(Error::DegenerateGeometry(
            "light not above fingertip".into(),
        ));
    }
    Ok(h * lateral / (light_height - h))
}

/// Inverse of [`gap_from_hover`].
pub fn hover_from_gap(gap: f64, light_height: f64, lateral: f64) -> Result<f64> {
    if !(lateral > 1e-9) {
        return Err(Error::DegenerateGeometry(
            "light directly above the fingertip".into(),
        ));
    }
    if !(light_height > 0.0) || gap < 0.0 {
        return Err(Error::DegenerateGeometry(
            "light below surface or negative gap".into(),
        ));
    }
    Ok(gap * light_height / (gap + lateral))
}

/// Tangent cone of a sphere seen from a point light.
#[derive(Debug, Clone, Copy)]
pub struct ShadowCone {
    pub apex: Point3<f64>,
    pub axis: Vector3<f64>,
    /// Half-angle of the cone.
    pub half_angle: f64,
    e1: Vector3<f64>,
    e2: Vector3<f64>,
}

impl ShadowCone {
    pub fn new(light: &Point3<f64>, center: &Point3<f64>, radius: f64) -> Option<Self> {
        let v = center - light;
        let dist = v.norm();
        if !(dist > radius) {
            return None;
        }
        let axis = v / dist;
        let helper = if axis.x.abs() < 0.9 {
            Vector3::x()
        } else {
            Vector3::y()
        };
        let e1 = (helper - axis * helper.dot(&axis)).normalize();
        let e2 = axis.cross(&e1);
        Some(Self {
            apex: *light,
            axis,
            half_angle: (radius / dist).asin(),
            e1,
            e2,
        })
    }

    /// Where the generator at azimuth `phi` meets the plane, if it does.
    pub fn outline_point(&self, phi: f64, plane: &Plane) -> Option<Point3<f64>> {
        let (s, c) = self.half_angle.sin_cos();
        let w = self.axis * c + (self.e1 * phi.cos() + self.e2 * phi.sin()) * s;
        let denom = w.dot(&plane.normal);
        if denom >= -1e-12 {
            return None;
        }
        let t = (plane.origin - self.apex).dot(&plane.normal) / denom;
        (t > 0.0).then(|| self.apex + w * t)
    }

    /// Angular offset of `p` from the cone boundary: negative inside the
    /// shadow cone, positive outside.
    pub fn boundary_offset(&self, p: &Point3<f64>) -> f64 {
        let v = (p - self.apex).normalize();
        v.dot(&self.axis).clamp(-1.0, 1.0).acos() - self.half_angle
    }
}

/// Image direction along which a fingertip's shadow moves as it lifts off:
/// away from the light along the epipolar line through `tip_px`.
pub fn epipolar_direction(
    camera: &PinholeCamera,
    plane: &Plane,
    light: &Point3<f64>,
    tip_px: &Point2<f64>,
) -> Option<Vector2<f64>> {
    let q = camera.back_project(tip_px, plane).ok()?;
    let beyond = q + (q - light) * 0.05;
    let d = camera.project(&beyond).ok()? - camera.project(&q).ok()?;
    (d.norm() > 1e-9).then(|| d.normalize())
}

/// Direction in which to look for the shadow tip: halfway between the
/// finger's pointing direction in the image (`axis_px`, towards the tip)
/// and the epipolar direction.
pub fn shadow_search_direction(
    camera: &PinholeCamera,
    plane: &Plane,
    light: &Point3<f64>,
    tip_px: &Point2<f64>,
    axis_px: &Vector2<f64>,
) -> Vector2<f64> {
    let axis = if axis_px.norm() > 1e-9 {
        axis_px.normalize()
    } else {
        Vector2::new(0.0, -1.0)
    };
    match epipolar_direction(camera, plane, light, tip_px) {
        Some(e) if (axis + e).norm() > 1e-3 => (axis + e).normalize(),
        _ => axis,
    }
}

const OUTLINE_SAMPLES: usize = 1440;

/// Analytic image position of a finger's shadow tip under `light`: the
/// point of the capsule shadow outline that lies furthest along `direction`
/// from the fingertip pixel. `None` when that point is hidden from the
/// camera, off-image, or the geometry is degenerate.
pub fn analytic_shadow_tip(
    scene: &Scene,
    finger: &CapsuleFinger,
    light: &Point3<f64>,
    direction: &Vector2<f64>,
) -> Option<Point2<f64>> {
    let camera = &scene.camera;
    let plane = &scene.surface.plane;
    let tip_px = camera.project(&finger.tip).ok()?;
    let mut best: Option<(f64, Point3<f64>, Point2<f64>)> = None;
    for center in [finger.tip_center, finger.knuckle_center] {
        let cone = ShadowCone::new(light, &center, finger.radius)?;
        for i in 0..OUTLINE_SAMPLES {
            let phi = i as f64 * std::f64::consts::TAU / OUTLINE_SAMPLES as f64;
            let p = cone.outline_point(phi, plane)?;
            let Ok(px) = camera.project(&p) else { continue };
            let score = direction.dot(&(px - tip_px));
            if best.is_none_or(|(b, _, _)| score > b) {
                best = Some((score, p, px));
            }
        }
    }
    let (_, p, px) = best?;
    if !camera.in_bounds(&px) || scene.occluded(&camera.center(), &p) {
        return None;
    }
    Some(px)
}
