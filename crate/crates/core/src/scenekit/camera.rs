use nalgebra::{Isometry3, Point2, Point3, Rotation3, Translation3, UnitQuaternion, Vector3};

use super::geometry::{Plane, Ray};
use crate::error::{Error, Result};

/// Pinhole camera; camera frame is x right, y down, z forward.
///
/// Pixel `(i, j)` has its center at continuous coordinate `(i, j)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PinholeCamera {
    /// World → camera.
    pub pose: Isometry3<f64>,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl PinholeCamera {
    pub fn new(
        pose: Isometry3<f64>,
        [fx, fy, cx, cy]: [f64; 4],
        width: usize,
        height: usize,
    ) -> Result<Self> {
        if !(fx > 0.0 && fy > 0.0) {
            return Err(Error::InvalidScene(format!(
                "focal lengths must be positive ({fx}, {fy})"
            )));
        }
        if !(cx >= 0.0 && cy >= 0.0 && cx <= (width - 1) as f64 && cy <= (height - 1) as f64) {
            return Err(Error::InvalidScene(format!(
                "principal point ({cx}, {cy}) outside image"
            )));
        }
        Ok(Self {
            pose,
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        })
    }

    /// Camera at `eye` looking at `target`; `up` is a world hint for image-up.
    pub fn look_at(
        eye: Point3<f64>,
        target: Point3<f64>,
        up: Vector3<f64>,
        intrinsics: [f64; 4],
        width: usize,
        height: usize,
    ) -> Result<Self> {
        let forward = target - eye;
        if forward.norm() < 1e-9 {
            return Err(Error::InvalidScene("camera eye and target coincide".into()));
        }
        let z = forward.normalize();
        let x = z.cross(&up);
        if x.norm() < 1e-9 {
            return Err(Error::InvalidScene(
                "camera up hint is parallel to view direction".into(),
            ));
        }
        let x = x.normalize();
        let y = z.cross(&x);
        // Rows of the world→camera rotation are the camera axes in world terms.
        let rot = Rotation3::from_matrix_unchecked(nalgebra::Matrix3::from_rows(&[
            x.transpose(),
            y.transpose(),
            z.transpose(),
        ]));
        let q = UnitQuaternion::from_rotation_matrix(&rot);
        let t = -(q * eye.coords);
        Self::new(
            Isometry3::from_parts(Translation3::from(t), q),
            intrinsics,
            width,
            height,
        )
    }

    pub fn center(&self) -> Point3<f64> {
        self.pose.inverse() * Point3::origin()
    }

    /// Camera-frame axis expressed in world coordinates.
    pub fn axis_world(&self, axis: Vector3<f64>) -> Vector3<f64> {
        self.pose.rotation.inverse() * axis
    }

    pub fn to_camera(&self, p: &Point3<f64>) -> Point3<f64> {
        self.pose * p
    }

    pub fn to_world(&self, p: &Point3<f64>) -> Point3<f64> {
        self.pose.inverse() * p
    }

    /// Pinhole projection `u = cx + fx·X/Z`, `v = cy + fy·Y/Z`.
    pub fn project(&self, world: &Point3<f64>) -> Result<Point2<f64>> {
        let p = self.pose * world;
        if p.z <= 1e-9 {
            return Err(Error::BehindCamera { depth: p.z });
        }
        Ok(Point2::new(
            self.cx + self.fx * p.x / p.z,
            self.cy + self.fy * p.y / p.z,
        ))
    }

    pub fn in_bounds(&self, px: &Point2<f64>) -> bool {
        px.x >= -0.5
            && px.y >= -0.5
            && px.x < self.width as f64 - 0.5
            && px.y < self.height as f64 - 0.5
    }

    /// World-space viewing ray through a (continuous) pixel.
    pub fn ray(&self, px: &Point2<f64>) -> Ray {
        let dir_cam = Vector3::new((px.x - self.cx) / self.fx, (px.y - self.cy) / self.fy, 1.0);
        let inv = self.pose.inverse();
        Ray::new(inv * Point3::origin(), inv.rotation * dir_cam)
    }

    /// Intersection of the viewing ray with a plane.
    pub fn back_project(&self, px: &Point2<f64>, plane: &Plane) -> Result<Point3<f64>> {
        let ray = self.ray(px);
        plane
            .intersect(&ray)
            .map(|t| ray.at(t))
            .ok_or_else(|| Error::DegenerateGeometry("viewing ray does not reach the plane".into()))
    }
}
