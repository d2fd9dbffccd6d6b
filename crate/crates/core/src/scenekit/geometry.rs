use nalgebra::{Point3, Vector3};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub origin: Point3<f64>,
    /// Unit direction.
    pub dir: Vector3<f64>,
}

impl Ray {
    pub fn new(origin: Point3<f64>, dir: Vector3<f64>) -> Self {
        Self {
            origin,
            dir: dir.normalize(),
        }
    }

    #[inline]
    pub fn at(&self, t: f64) -> Point3<f64> {
        self.origin + self.dir * t
    }
}

/// Infinite plane through `origin` with unit `normal`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Plane {
    pub origin: Point3<f64>,
    pub normal: Vector3<f64>,
    u: Vector3<f64>,
    v: Vector3<f64>,
}

impl Plane {
    pub fn new(origin: Point3<f64>, normal: Vector3<f64>) -> Result<Self> {
        let norm = normal.norm();
        if !(norm > 1e-12) || !norm.is_finite() {
            return Err(Error::InvalidScene("plane normal must be non-zero".into()));
        }
        let normal = normal / norm;
        // In-plane basis; stable for any normal.
        let helper = if normal.x.abs() < 0.9 {
            Vector3::x()
        } else {
            Vector3::y()
        };
        let u = (helper - normal * helper.dot(&normal)).normalize();
        let v = normal.cross(&u);
        Ok(Self {
            origin,
            normal,
            u,
            v,
        })
    }

    /// The z = 0 plane facing +z.
    pub fn ground() -> Self {
        Self::new(Point3::origin(), Vector3::z()).expect("valid")
    }

    #[inline]
    pub fn signed_distance(&self, p: &Point3<f64>) -> f64 {
        (p - self.origin).dot(&self.normal)
    }

    /// Orthogonal projection onto the plane.
    #[inline]
    pub fn project(&self, p: &Point3<f64>) -> Point3<f64> {
        p - self.normal * self.signed_distance(p)
    }

    /// In-plane 2-D coordinates of `p` (after orthogonal projection).
    #[inline]
    pub fn coords(&self, p: &Point3<f64>) -> [f64; 2] {
        let d = p - self.origin;
        [d.dot(&self.u), d.dot(&self.v)]
    }

    /// Ray parameter of the intersection, if it lies in front of the origin.
    pub fn intersect(&self, ray: &Ray) -> Option<f64> {
        let denom = ray.dir.dot(&self.normal);
        if denom.abs() < 1e-12 {
            return None;
        }
        let t = (self.origin - ray.origin).dot(&self.normal) / denom;
        (t > 0.0).then_some(t)
    }
}

/// Nearest positive intersection of a ray with a capsule (segment `a`–`b`,
/// radius `r`), returned with the outward surface normal.
pub fn ray_capsule(
    ray: &Ray,
    a: &Point3<f64>,
    b: &Point3<f64>,
    r: f64,
    t_min: f64,
) -> Option<(f64, Vector3<f64>)> {
    let ba = b - a;
    let oa = ray.origin - a;
    let baba = ba.dot(&ba);
    let bard = ba.dot(&ray.dir);
    let baoa = ba.dot(&oa);
    let rdoa = ray.dir.dot(&oa);
    let oaoa = oa.dot(&oa);

    let qa = baba - bard * bard;
    let qb = baba * rdoa - baoa * bard;
    let qc = baba * oaoa - baoa * baoa - r * r * baba;
    let mut best: Option<f64> = None;
    if qa.abs() > 1e-12 {
        let disc = qb * qb - qa * qc;
        if disc >= 0.0 {
            let sq = disc.sqrt();
            for t in [(-qb - sq) / qa, (-qb + sq) / qa] {
                if t > t_min {
                    let y = baoa + t * bard;
                    if y > 0.0 && y < baba {
                        best = Some(best.map_or(t, |b: f64| b.min(t)));
                        break;
                    }
                }
            }
        }
    }
    for center in [a, b] {
        if let Some(t) = ray_sphere(ray, center, r, t_min) {
            best = Some(best.map_or(t, |b: f64| b.min(t)));
        }
    }
    best.map(|t| {
        let p = ray.at(t);
        let h = ((p - a).dot(&ba) / baba).clamp(0.0, 1.0);
        let n = (p - (a + ba * h)).normalize();
        (t, n)
    })
}

fn ray_sphere(ray: &Ray, c: &Point3<f64>, r: f64, t_min: f64) -> Option<f64> {
    let oc = ray.origin - c;
    let b = oc.dot(&ray.dir);
    let cc = oc.dot(&oc) - r * r;
    let disc = b * b - cc;
    if disc < 0.0 {
        return None;
    }
    let sq = disc.sqrt();
    [-b - sq, -b + sq].into_iter().find(|&t| t > t_min)
}

/// Intersection with a flat disk; the normal faces the ray origin.
pub fn ray_disk(
    ray: &Ray,
    center: &Point3<f64>,
    normal: &Vector3<f64>,
    radius: f64,
    t_min: f64,
) -> Option<(f64, Vector3<f64>)> {
    let denom = ray.dir.dot(normal);
    if denom.abs() < 1e-12 {
        return None;
    }
    let t = (center - ray.origin).dot(normal) / denom;
    if t <= t_min || (ray.at(t) - center).norm_squared() > radius * radius {
        return None;
    }
    let n = if denom < 0.0 { *normal } else { -normal };
    Some((t, n))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn capsule_hit_from_side_and_cap() {
        let a = Point3::new(0.0, 0.0, 0.0);
        let b = Point3::new(0.0, 10.0, 0.0);
        let side = Ray::new(Point3::new(0.0, 5.0, 10.0), -Vector3::z());
        let (t, n) = ray_capsule(&side, &a, &b, 2.0, 0.0).unwrap();
        assert!((t - 8.0).abs() < 1e-9);
        assert!((n - Vector3::z()).norm() < 1e-9);

        let cap = Ray::new(Point3::new(0.0, -10.0, 0.0), Vector3::y());
        let (t, n) = ray_capsule(&cap, &a, &b, 2.0, 0.0).unwrap();
        assert!((t - 8.0).abs() < 1e-9);
        assert!((n + Vector3::y()).norm() < 1e-9);

        let miss = Ray::new(Point3::new(5.0, 5.0, 10.0), -Vector3::z());
        assert!(ray_capsule(&miss, &a, &b, 2.0, 0.0).is_none());
    }

    #[test]
    fn tilted_plane_basis_is_orthonormal() {
        let plane = Plane::new(Point3::new(1.0, 2.0, 3.0), Vector3::new(1.0, 1.0, 0.2)).unwrap();
        let p = Point3::new(5.0, -2.0, 7.0);
        let q = plane.project(&p);
        assert!(plane.signed_distance(&q).abs() < 1e-12);
        let [x, y] = plane.coords(&q);
        let back = plane.origin + plane.u * x + plane.v * y;
        assert!((back - q).norm() < 1e-9);
    }
}
