//! Shadow-tip detection and analytic hover recovery.

use std::collections::VecDeque;

use nalgebra::{Point2, Point3, Vector2};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::patches::FingerKeypointsPx;
use crate::scenekit::shadow::{shadow_search_direction, ShadowCone};
use crate::scenekit::{PinholeCamera, Plane, Scene};
use crate::suppress::SuppressedFrame;

/// Tuning for [`detect_shadow_tip`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectParams {
    /// Search radius around the fingertip, pixels.
    pub max_radius_px: f64,
    /// Half-angle of the search cone around the search direction.
    pub half_angle_deg: f64,
    /// Dark pixels are below `dark_ratio · local median`.
    pub dark_ratio: f32,
    /// Half-size of the square window for the local median.
    pub median_half_window: usize,
}

impl Default for DetectParams {
    fn default() -> Self {
        Self {
            max_radius_px: 160.0,
            half_angle_deg: 80.0,
            dark_ratio: 0.35,
            median_half_window: 100,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ShadowDetection {
    Found(Point2<f64>),
    /// No dark region in the search cone.
    Absent,
    /// The dark region runs into the image border or the search radius.
    Clipped,
}

impl ShadowDetection {
    pub fn point(&self) -> Option<Point2<f64>> {
        match self {
            ShadowDetection::Found(p) => Some(*p),
            _ => None,
        }
    }
}

fn local_median(image: &Image<f32>, c: (isize, isize), half: usize) -> f32 {
    let half = half as isize;
    let mut vals = Vec::new();
    for y in (c.1 - half..=c.1 + half).step_by(2) {
        for x in (c.0 - half..=c.0 + half).step_by(2) {
            if let Some(v) = image.try_get(x, y) {
                vals.push(v);
            }
        }
    }
    if vals.is_empty() {
        return 0.0;
    }
    let mid = vals.len() / 2;
    *vals.select_nth_unstable_by(mid, f32::total_cmp).1
}

/// Finds the shadow tip of a finger in one suppressed channel.
///
/// Pixels within `max_radius_px` of `tip_px` and inside the cone around
/// `direction` that are darker than `dark_ratio` of the local median form
/// candidate regions; the region with the largest summed darkness wins and
/// its extremal point along `direction` is refined to the half-level
/// crossing along that direction.
pub fn detect_shadow_tip(
    image: &Image<f32>,
    tip_px: &Point2<f64>,
    direction: &Vector2<f64>,
    params: &DetectParams,
) -> ShadowDetection {
    let Some(v) = direction.try_normalize(1e-12) else {
        return ShadowDetection::Absent;
    };
    let (w, h) = (image.width() as isize, image.height() as isize);
    let center = (tip_px.x.round() as isize, tip_px.y.round() as isize);
    let median = local_median(image, center, params.median_half_window);
    if !(median > 0.0) {
        return ShadowDetection::Absent;
    }
    let thr = params.dark_ratio * median;
    let cos_half = params.half_angle_deg.to_radians().cos();
    let r = params.max_radius_px;
    let ri = r.ceil() as isize;
    let side = (2 * ri + 1) as usize;
    let idx =
        |x: isize, y: isize| ((y - center.1 + ri) as usize) * side + (x - center.0 + ri) as usize;
    let in_region = |x: isize, y: isize| {
        let d = Vector2::new(x as f64 - tip_px.x, y as f64 - tip_px.y);
        let n = d.norm();
        n <= r && (n < 1.0 || d.dot(&v) >= cos_half * n)
    };
    let mut dark = vec![false; side * side];
    for y in (center.1 - ri).max(0)..(center.1 + ri + 1).min(h) {
        for x in (center.0 - ri).max(0)..(center.0 + ri + 1).min(w) {
            if in_region(x, y) && image.get(x as usize, y as usize) < thr {
                dark[idx(x, y)] = true;
            }
        }
    }
    // Connected components (8-neighbourhood) inside the region.
    let mut label = vec![0u32; side * side];
    let mut best: Option<(f32, Vec<(isize, isize)>)> = None;
    let mut next = 0u32;
    let mut queue = VecDeque::new();
    for y in (center.1 - ri).max(0)..(center.1 + ri + 1).min(h) {
        for x in (center.0 - ri).max(0)..(center.0 + ri + 1).min(w) {
            let i = idx(x, y);
            if !dark[i] || label[i] != 0 {
                continue;
            }
            next += 1;
            label[i] = next;
            queue.push_back((x, y));
            let mut members = Vec::new();
            let mut score = 0.0f32;
            while let Some((cx, cy)) = queue.pop_front() {
                members.push((cx, cy));
                score += thr - image.get(cx as usize, cy as usize);
                for dy in -1..=1 {
                    for dx in -1..=1 {
                        let (nx, ny) = (cx + dx, cy + dy);
                        if nx < 0
                            || ny < 0
                            || nx >= w
                            || ny >= h
                            || (nx - center.0).abs() > ri
                            || (ny - center.1).abs() > ri
                        {
                            continue;
                        }
                        let j = idx(nx, ny);
                        if dark[j] && label[j] == 0 {
                            label[j] = next;
                            queue.push_back((nx, ny));
                        }
                    }
                }
            }
            if best.as_ref().is_none_or(|(s, _)| score > *s) {
                best = Some((score, members));
            }
        }
    }
    let Some((_, members)) = best else {
        return ShadowDetection::Absent;
    };
    let along = |x: isize, y: isize| (x as f64 - tip_px.x) * v.x + (y as f64 - tip_px.y) * v.y;
    let top = members
        .iter()
        .map(|&(x, y)| along(x, y))
        .fold(f64::NEG_INFINITY, f64::max);
    let frontier: Vec<_> = members
        .iter()
        .copied()
        .filter(|&(x, y)| along(x, y) >= top - 1.5)
        .collect();
    let touches_edge = |&(x, y): &(isize, isize)| x == 0 || y == 0 || x == w - 1 || y == h - 1;
    let near_rim = |&(x, y): &(isize, isize)| {
        let d = Vector2::new(x as f64 - tip_px.x, y as f64 - tip_px.y).norm();
        d > r - 1.5
    };
    if frontier.iter().any(|p| touches_edge(p) || near_rim(p)) {
        return ShadowDetection::Clipped;
    }
    // Crossing of the level halfway between the shadow and the lit surface
    // just beyond it, marched along v from each frontier pixel.
    let march = |start: Point2<f64>, level: f32| -> Option<f64> {
        let mut prev = (0.0, image.sample_bilinear(start.x, start.y));
        let mut t = 0.0;
        while t < 4.0 {
            t += 0.05;
            let p = start + v * t;
            let val = image.sample_bilinear(p.x, p.y);
            if val >= level {
                let (t0, v0) = prev;
                let f = if val > v0 {
                    ((level - v0) / (val - v0)) as f64
                } else {
                    1.0
                };
                return Some(t0 + f * (t - t0));
            }
            prev = (t, val);
        }
        None
    };
    let mut tip: Option<(f64, Point2<f64>, f32)> = None;
    for &(x, y) in &frontier {
        let start = Point2::new(x as f64, y as f64);
        let (p, level) = match march(start, 0.5 * median) {
            Some(t0) => {
                let lit = start + v * (t0 + 3.0);
                let lit = image.sample_bilinear(lit.x, lit.y);
                let dark = [0.0, 1.0, 2.0]
                    .iter()
                    .map(|&b| {
                        let q = start - v * b;
                        image.sample_bilinear(q.x, q.y)
                    })
                    .fold(f32::INFINITY, f32::min);
                let level = if lit > dark {
                    0.5 * (lit + dark)
                } else {
                    0.5 * median
                };
                (start + v * march(start, level).unwrap_or(t0), level)
            }
            None => (start, 0.5 * median),
        };
        let s = (p - tip_px).dot(&v);
        if tip.is_none_or(|(b, _, _)| s > b) {
            tip = Some((s, p, level));
        }
    }
    let Some((_, coarse, level)) = tip else {
        return ShadowDetection::Absent;
    };
    ShadowDetection::Found(refine_extremum(image, &coarse, &v, level).unwrap_or(coarse))
}

/// Fits a parabola to the level crossings on lines parallel to `v` around
/// `coarse` and returns its apex.
fn refine_extremum(
    image: &Image<f32>,
    coarse: &Point2<f64>,
    v: &Vector2<f64>,
    level: f32,
) -> Option<Point2<f64>> {
    let u = Vector2::new(-v.y, v.x);
    let mut pts = Vec::new();
    for i in -16..=16 {
        let d = i as f64 * 0.25;
        let start = coarse - v * 2.5 + u * d;
        let mut prev = image.sample_bilinear(start.x, start.y);
        if prev >= level {
            continue;
        }
        let mut t = 0.0;
        while t < 5.0 {
            t += 0.05;
            let p = start + v * t;
            let val = image.sample_bilinear(p.x, p.y);
            if val >= level {
                let f = if val > prev {
                    ((level - prev) / (val - prev)) as f64
                } else {
                    1.0
                };
                pts.push((d, t - 0.05 + 0.05 * f - 2.5));
                break;
            }
            prev = val;
        }
    }
    let top = pts.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
    let near: Vec<(f64, f64)> = pts.into_iter().filter(|p| p.1 >= top - 1.5).collect();
    if near.len() < 5 {
        return None;
    }
    // Least squares a + b·d + c·d².
    let mut m = nalgebra::Matrix3::<f64>::zeros();
    let mut r = nalgebra::Vector3::<f64>::zeros();
    for &(d, a) in &near {
        let row = nalgebra::Vector3::new(1.0, d, d * d);
        m += row * row.transpose();
        r += row * a;
    }
    let c = m.lu().solve(&r)?;
    let (lo, hi) = (near.first()?.0, near.last()?.0);
    if c[2] >= -1e-6 {
        return None;
    }
    let d = (-c[1] / (2.0 * c[2])).clamp(lo, hi);
    let along = c[0] + c[1] * d + c[2] * d * d;
    Some(coarse + v * along + u * d)
}

/// Point-model hover: both pixels are back-projected onto the plane, the
/// in-plane gap `d` between them gives `h = d·Lz / (d + |L∥ − F∥|)`.
pub fn geometric_hover(
    shadow_px: &Point2<f64>,
    tip_px: &Point2<f64>,
    camera: &PinholeCamera,
    led: &Point3<f64>,
    plane: &Plane,
) -> Result<f64> {
    let s = camera.back_project(shadow_px, plane)?;
    let f = camera.back_project(tip_px, plane)?;
    let lz = plane.signed_distance(led);
    let lateral = (plane.project(led) - f).norm();
    crate::scenekit::hover_from_gap((s - f).norm(), lz, lateral)
}

/// Finger dimensions assumed by [`geometric_hover_capsule`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FingerDims {
    pub radius: f64,
    /// Distance between the tip and knuckle sphere centers.
    pub length: f64,
}

impl Default for FingerDims {
    fn default() -> Self {
        Self {
            radius: crate::scenekit::FingerPose::DEFAULT_RADIUS,
            length: crate::scenekit::FingerPose::DEFAULT_LENGTH,
        }
    }
}

/// Image keypoints of the finger being measured.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FingerPixels {
    pub tip: Point2<f64>,
    pub pip: Point2<f64>,
    pub mcp: Point2<f64>,
}

const OUTLINE_SAMPLES: usize = 720;

/// Capsule for a pad at hover `h` on the tip's viewing ray, with the
/// knuckle placed on the MCP viewing ray `length` away.
fn capsule_at(
    h: f64,
    px: &FingerPixels,
    camera: &PinholeCamera,
    plane: &Plane,
    dims: &FingerDims,
) -> Option<(Point3<f64>, Point3<f64>)> {
    let ray = camera.ray(&px.tip);
    let dn = ray.dir.dot(&plane.normal);
    if dn.abs() < 1e-12 {
        return None;
    }
    let pad = ray.at((h - plane.signed_distance(&ray.origin)) / dn);
    let c = pad + plane.normal * dims.radius;
    let mray = camera.ray(&px.mcp);
    let d = mray.dir.normalize();
    let oc = mray.origin - c;
    let b = d.dot(&oc);
    let disc = b * b - (oc.norm_squared() - dims.length * dims.length);
    let roots: Vec<f64> = if disc >= 0.0 {
        let s = disc.sqrt();
        vec![-b - s, -b + s]
    } else {
        vec![-b]
    };
    let pip = |k: &Point3<f64>| {
        let mid = nalgebra::center(&c, k);
        camera
            .project(&mid)
            .map(|p| (p - px.pip).norm())
            .unwrap_or(f64::INFINITY)
    };
    roots
        .into_iter()
        .filter(|&t| t > 0.0)
        .map(|t| mray.origin + d * t)
        .filter(|k| plane.signed_distance(k) >= plane.signed_distance(&c) - 1e-9)
        .min_by(|a, b| pip(a).total_cmp(&pip(b)))
        .map(|k| (c, k))
}

/// Furthest extent along `v` (from the tip pixel) of the capsule's shadow outline.
fn shadow_extent(
    caps: (Point3<f64>, Point3<f64>),
    px: &FingerPixels,
    v: &Vector2<f64>,
    camera: &PinholeCamera,
    led: &Point3<f64>,
    plane: &Plane,
    radius: f64,
) -> Option<f64> {
    let mut best = f64::NEG_INFINITY;
    for center in [caps.0, caps.1] {
        let cone = ShadowCone::new(led, &center, radius)?;
        for i in 0..OUTLINE_SAMPLES {
            let phi = i as f64 * std::f64::consts::TAU / OUTLINE_SAMPLES as f64;
            let p = cone.outline_point(phi, plane)?;
            if let Ok(q) = camera.project(&p) {
                best = best.max(v.dot(&(q - px.tip)));
            }
        }
    }
    best.is_finite().then_some(best)
}

/// Result of [`geometric_hover_capsule`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HoverFit {
    pub hover_mm: f64,
    /// How far the shadow tip moves along the search direction per mm of
    /// hover at the solution; larger means a better-conditioned estimate.
    pub px_per_mm: f64,
}

/// Hover of a capsule finger from its detected shadow tip.
///
/// For a trial hover `h` the finger is rebuilt from the keypoints (pad on
/// the tip's viewing ray at height `h`, knuckle on the MCP viewing ray);
/// the hover is the `h` whose shadow outline reaches exactly as far along
/// `direction` as the detected tip. Returns 0 when the detected tip does
/// not reach past the contact shadow.
pub fn geometric_hover_capsule(
    shadow_px: &Point2<f64>,
    px: &FingerPixels,
    direction: &Vector2<f64>,
    camera: &PinholeCamera,
    led: &Point3<f64>,
    plane: &Plane,
    dims: &FingerDims,
) -> Result<HoverFit> {
    let v = direction
        .try_normalize(1e-12)
        .ok_or_else(|| Error::DegenerateGeometry("zero search direction".into()))?;
    let target = v.dot(&(shadow_px - px.tip));
    let f = |h: f64| -> Option<f64> {
        let caps = capsule_at(h, px, camera, plane, dims)?;
        shadow_extent(caps, px, &v, camera, led, plane, dims.radius).map(|e| e - target)
    };
    let g0 = f(0.0)
        .ok_or_else(|| Error::DegenerateGeometry("finger cannot be rebuilt at contact".into()))?;
    let slope = |h: f64| {
        let (a, b) = ((h - 0.5).max(0.0), h + 0.5);
        match (f(a), f(b)) {
            (Some(fa), Some(fb)) => ((fb - fa) / (b - a)).max(0.0),
            _ => 0.0,
        }
    };
    if g0 >= 0.0 {
        return Ok(HoverFit {
            hover_mm: 0.0,
            px_per_mm: slope(0.0),
        });
    }
    let lz = plane.signed_distance(led);
    let h_max = (lz - 2.0 * dims.radius - dims.length - 1.0).max(0.0);
    let step = 2.0;
    let (mut lo, mut hi) = (0.0, f64::NAN);
    let mut h = step;
    while h <= h_max {
        match f(h) {
            Some(g) if g >= 0.0 => {
                hi = h;
                break;
            }
            Some(_) => lo = h,
            None => break,
        }
        h += step;
    }
    if hi.is_nan() {
        return Err(Error::DegenerateGeometry(
            "shadow tip beyond any reachable hover height".into(),
        ));
    }
    for _ in 0..40 {
        let mid = 0.5 * (lo + hi);
        if f(mid).is_some_and(|g| g < 0.0) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let h = 0.5 * (lo + hi);
    Ok(HoverFit {
        hover_mm: h,
        px_per_mm: slope(h),
    })
}

/// Combines per-LED fits, weighting each by its squared sensitivity. A fit
/// whose shadow tip would be off by more than one pixel from the combined
/// estimate is dropped (the worst one at a time).
pub fn fuse_hover(fits: &[HoverFit]) -> Option<f64> {
    let mut fits = fits.to_vec();
    loop {
        let est = weighted_hover(&fits)?;
        let worst = fits
            .iter()
            .enumerate()
            .map(|(i, f)| (i, (f.hover_mm - est).abs() * f.px_per_mm))
            .max_by(|a, b| a.1.total_cmp(&b.1))?;
        if fits.len() < 2 || worst.1 <= 1.0 {
            return Some(est);
        }
        fits.remove(worst.0);
    }
}

fn weighted_hover(fits: &[HoverFit]) -> Option<f64> {
    let w: f64 = fits.iter().map(|f| f.px_per_mm * f.px_per_mm).sum();
    if fits.is_empty() {
        None
    } else if w > 1e-12 {
        Some(
            fits.iter()
                .map(|f| f.px_per_mm * f.px_per_mm * f.hover_mm)
                .sum::<f64>()
                / w,
        )
    } else {
        Some(fits.iter().map(|f| f.hover_mm).sum::<f64>() / fits.len() as f64)
    }
}

/// Per-finger hover from a multi-channel suppressed frame: detect the shadow
/// tip in every LED channel, invert each through the capsule model and fuse.
#[derive(Debug, Clone)]
pub struct GeometricEstimator {
    pub camera: PinholeCamera,
    pub plane: Plane,
    /// Headset LED positions by index.
    pub leds: Vec<(u8, Point3<f64>)>,
    pub detect: DetectParams,
    pub dims: FingerDims,
    /// Hover at which the touch logit crosses zero.
    pub touch_mm: f64,
    /// Hover change per logit unit.
    pub logit_scale_mm: f64,
}

impl GeometricEstimator {
    pub fn from_scene(scene: &Scene) -> Self {
        Self {
            camera: scene.camera,
            plane: scene.surface.plane,
            leds: scene
                .headset_leds
                .iter()
                .map(|l| (l.index, l.light.pos()))
                .collect(),
            detect: DetectParams::default(),
            dims: FingerDims::default(),
            touch_mm: 1.0,
            logit_scale_mm: 0.5,
        }
    }

    /// `None` when no channel gave usable evidence (every shadow clipped or
    /// no matching LED). A channel with no shadow at all counts as contact.
    pub fn hover(&self, frame: &SuppressedFrame, kp: &FingerKeypointsPx) -> Option<f64> {
        let px = FingerPixels {
            tip: kp.tip,
            pip: kp.pip,
            mcp: kp.mcp,
        };
        let axis = kp.tip - kp.pip;
        let mut fits = Vec::new();
        let mut absent = false;
        for k in frame.leds.iter() {
            let (Some(image), Some(led)) = (
                frame.led_channel(k),
                self.leds.iter().find(|l| l.0 == k).map(|l| l.1),
            ) else {
                continue;
            };
            let dir = shadow_search_direction(&self.camera, &self.plane, &led, &kp.tip, &axis);
            match detect_shadow_tip(image, &kp.tip, &dir, &self.detect) {
                ShadowDetection::Found(p) => {
                    match geometric_hover_capsule(
                        &p,
                        &px,
                        &dir,
                        &self.camera,
                        &led,
                        &self.plane,
                        &self.dims,
                    ) {
                        Ok(fit) => fits.push(fit),
                        Err(e) => log::debug!("finger {} LED {k}: {e}", kp.finger_id),
                    }
                }
                ShadowDetection::Absent => absent = true,
                ShadowDetection::Clipped => {}
            }
        }
        fuse_hover(&fits).or(absent.then_some(0.0))
    }

    pub fn logit(&self, hover_mm: f64) -> f64 {
        (self.touch_mm - hover_mm) / self.logit_scale_mm
    }
}
