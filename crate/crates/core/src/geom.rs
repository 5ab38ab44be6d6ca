//! Geometric primitives shared by every augmentation stage.
//!
//! Conventions: sensor-centred right-handed frame, azimuth measured from +x
//! toward +y and wrapped into `[0, 2π)`, elevation measured from the xy-plane
//! toward +z. A box's length runs along its heading (box-frame x'), its width
//! along box-frame y'.

use std::f64::consts::{PI, TAU};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Distance from the z-axis below which a box center has no usable azimuth.
pub const AXIS_EPS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub intensity: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64, z: f64, intensity: f64) -> Self {
        Self { x, y, z, intensity }
    }

    pub fn xyz(&self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite() && self.intensity.is_finite()
    }

    /// Azimuth of the point's xy projection, `0` on the z-axis.
    pub fn azimuth(&self) -> f64 {
        azimuth_of(self.x, self.y)
    }
}

/// Wraps `atan2(y, x)` into `[0, 2π)`. Points on the z-axis get azimuth 0.
pub fn azimuth_of(x: f64, y: f64) -> f64 {
    if x == 0.0 && y == 0.0 {
        return 0.0;
    }
    wrap_angle(y.atan2(x))
}

/// Wraps any finite angle into `[0, 2π)`.
pub fn wrap_angle(a: f64) -> f64 {
    if (0.0..TAU).contains(&a) {
        return a;
    }
    let w = a.rem_euclid(TAU);
    // rem_euclid can round up to exactly 2π for tiny negative inputs
    if w >= TAU {
        0.0
    } else {
        w
    }
}

/// Normalizes a heading into `[-π, π)`. Values already in range are returned
/// untouched, which makes the operation idempotent bit for bit.
pub fn normalize_yaw(yaw: f64) -> f64 {
    if (-PI..PI).contains(&yaw) {
        return yaw;
    }
    let w = (yaw + PI).rem_euclid(TAU) - PI;
    if w >= PI {
        w - TAU
    } else if w < -PI {
        -PI
    } else {
        w
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Box3D {
    pub cx: f64,
    pub cy: f64,
    pub cz: f64,
    pub w: f64,
    pub l: f64,
    pub h: f64,
    pub yaw: f64,
    pub class_id: i32,
    /// Present only on predictions and pseudo-labels.
    pub score: Option<f64>,
}

impl Box3D {
    /// Builds a ground-truth box. Panics on non-positive sizes; use
    /// [`Box3D::try_new`] for untrusted input.
    pub fn new(center: [f64; 3], wlh: [f64; 3], yaw: f64, class_id: i32) -> Self {
        Self::try_new(center, wlh, yaw, class_id).expect("box sizes must be positive")
    }

    pub fn try_new(center: [f64; 3], wlh: [f64; 3], yaw: f64, class_id: i32) -> Result<Self> {
        if center.iter().chain(wlh.iter()).any(|v| !v.is_finite()) || !yaw.is_finite() {
            return Err(Error::NonFinite);
        }
        if wlh.iter().any(|&s| s <= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "box sizes must be positive, got {wlh:?}"
            )));
        }
        Ok(Self {
            cx: center[0],
            cy: center[1],
            cz: center[2],
            w: wlh[0],
            l: wlh[1],
            h: wlh[2],
            yaw: normalize_yaw(yaw),
            class_id,
            score: None,
        })
    }

    pub fn with_score(mut self, score: f64) -> Self {
        self.score = Some(score);
        self
    }

    pub fn center(&self) -> [f64; 3] {
        [self.cx, self.cy, self.cz]
    }

    /// Expresses a world point in the box frame: translate by the negated
    /// center, then rotate by the negated yaw.
    pub fn to_box_frame(&self, p: [f64; 3]) -> [f64; 3] {
        let (s, c) = self.yaw.sin_cos();
        let dx = p[0] - self.cx;
        let dy = p[1] - self.cy;
        [c * dx + s * dy, -s * dx + c * dy, p[2] - self.cz]
    }

    /// Boundary-inclusive containment test.
    pub fn contains(&self, p: [f64; 3]) -> bool {
        let [x, y, z] = self.to_box_frame(p);
        x.abs() <= 0.5 * self.l && y.abs() <= 0.5 * self.w && z.abs() <= 0.5 * self.h
    }

    /// The four footprint corners in the xy-plane. The 8 corners of the box
    /// share these azimuths.
    pub fn footprint_corners(&self) -> [[f64; 2]; 4] {
        let (s, c) = self.yaw.sin_cos();
        let hl = 0.5 * self.l;
        let hw = 0.5 * self.w;
        [(hl, hw), (hl, -hw), (-hl, -hw), (-hl, hw)]
            .map(|(bx, by)| [self.cx + c * bx - s * by, self.cy + s * bx + c * by])
    }

    /// All 8 corners.
    pub fn corners(&self) -> [[f64; 3]; 8] {
        let fp = self.footprint_corners();
        let lo = self.cz - 0.5 * self.h;
        let hi = self.cz + 0.5 * self.h;
        let mut out = [[0.0; 3]; 8];
        for (i, [x, y]) in fp.into_iter().enumerate() {
            out[i] = [x, y, lo];
            out[i + 4] = [x, y, hi];
        }
        out
    }

    /// The 6-vector (cx, cy, cz, w, l, h) compared by the consistency loss.
    pub fn center_size(&self) -> [f64; 6] {
        [self.cx, self.cy, self.cz, self.w, self.l, self.h]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum DomainTag {
    Source,
    TargetLabeled,
    TargetUnlabeled,
    Mixed,
}

/// One LiDAR sample with its labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub points: Vec<Point>,
    pub boxes: Vec<Box3D>,
    pub domain: DomainTag,
    /// Set when `boxes` are teacher predictions rather than ground truth.
    pub pseudo_labeled: bool,
}

impl Scene {
    pub fn new(points: Vec<Point>, boxes: Vec<Box3D>, domain: DomainTag) -> Self {
        Self {
            points,
            boxes,
            domain,
            pseudo_labeled: false,
        }
    }

    pub fn empty(domain: DomainTag) -> Self {
        Self::new(Vec::new(), Vec::new(), domain)
    }

    pub fn with_domain(mut self, domain: DomainTag) -> Self {
        self.domain = domain;
        self
    }

    pub fn expect_domain(&self, expected: DomainTag) -> Result<()> {
        if self.domain == expected {
            Ok(())
        } else {
            Err(Error::DomainMismatch {
                expected,
                found: self.domain,
            })
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SphericalCoord {
    pub azimuth: f64,
    pub elevation: f64,
    pub range: f64,
}

pub fn cart_to_spherical(p: &Point) -> Result<SphericalCoord> {
    if !(p.x.is_finite() && p.y.is_finite() && p.z.is_finite()) {
        return Err(Error::NonFinite);
    }
    let rxy = p.x.hypot(p.y);
    let range = rxy.hypot(p.z);
    if range == 0.0 {
        return Err(Error::ZeroVector);
    }
    Ok(SphericalCoord {
        azimuth: azimuth_of(p.x, p.y),
        elevation: p.z.atan2(rxy),
        range,
    })
}

/// Inverse of [`cart_to_spherical`]; `intensity` is carried through.
pub fn spherical_to_cart(s: &SphericalCoord, intensity: f64) -> Point {
    let (se, ce) = s.elevation.sin_cos();
    let (sa, ca) = s.azimuth.sin_cos();
    Point::new(
        s.range * ce * ca,
        s.range * ce * sa,
        s.range * se,
        intensity,
    )
}

/// Indices of scene points inside `bbox`, boundary-inclusive, ascending.
pub fn points_in_box(scene: &Scene, bbox: &Box3D) -> Vec<usize> {
    points_in_box_slice(&scene.points, bbox)
}

pub(crate) fn points_in_box_slice(points: &[Point], bbox: &Box3D) -> Vec<usize> {
    points
        .iter()
        .enumerate()
        .filter(|(_, p)| bbox.contains(p.xyz()))
        .map(|(i, _)| i)
        .collect()
}

/// Flip, rotate about z, then scale a whole scene.
///
/// `flip_x` mirrors across the x-axis (y ↦ −y), `flip_y` across the y-axis
/// (x ↦ −x). Steps whose parameters are the identity are skipped so the
/// identity transform leaves the scene bit-identical.
pub fn apply_rigid_transform(
    scene: &Scene,
    flip_x: bool,
    flip_y: bool,
    rot_z: f64,
    scale: f64,
) -> Result<Scene> {
    if !(scale > 0.0) || !scale.is_finite() {
        return Err(Error::NonPositiveScale(scale));
    }
    if !rot_z.is_finite() {
        return Err(Error::NonFinite);
    }
    let mut out = scene.clone();
    if flip_x {
        for p in &mut out.points {
            p.y = -p.y;
        }
        for b in &mut out.boxes {
            b.cy = -b.cy;
            b.yaw = normalize_yaw(-b.yaw);
        }
    }
    if flip_y {
        for p in &mut out.points {
            p.x = -p.x;
        }
        for b in &mut out.boxes {
            b.cx = -b.cx;
            b.yaw = normalize_yaw(PI - b.yaw);
        }
    }
    if rot_z != 0.0 {
        let (s, c) = rot_z.sin_cos();
        for p in &mut out.points {
            let (x, y) = (p.x, p.y);
            p.x = c * x - s * y;
            p.y = s * x + c * y;
        }
        for b in &mut out.boxes {
            let (x, y) = (b.cx, b.cy);
            b.cx = c * x - s * y;
            b.cy = s * x + c * y;
            b.yaw = normalize_yaw(b.yaw + rot_z);
        }
    }
    if scale != 1.0 {
        for p in &mut out.points {
            p.x *= scale;
            p.y *= scale;
            p.z *= scale;
        }
        for b in &mut out.boxes {
            b.cx *= scale;
            b.cy *= scale;
            b.cz *= scale;
            b.w *= scale;
            b.l *= scale;
            b.h *= scale;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-12
    }

    #[test]
    fn spherical_axis_cases() {
        let s = cart_to_spherical(&Point::new(1.0, 0.0, 0.0, 0.0)).unwrap();
        assert_eq!((s.azimuth, s.elevation, s.range), (0.0, 0.0, 1.0));

        let s = cart_to_spherical(&Point::new(0.0, 0.0, 1.0, 0.0)).unwrap();
        assert_eq!(s.azimuth, 0.0);
        assert!(close(s.elevation, PI / 2.0));
        assert!(close(s.range, 1.0));

        // negative zero must not flip the pole azimuth to π
        let s = cart_to_spherical(&Point::new(-0.0, 0.0, -2.0, 0.0)).unwrap();
        assert_eq!(s.azimuth, 0.0);
        assert!(close(s.elevation, -PI / 2.0));
    }

    #[test]
    fn spherical_diagonal() {
        let s = cart_to_spherical(&Point::new(1.0, 1.0, 2f64.sqrt(), 0.0)).unwrap();
        assert!(close(s.azimuth, PI / 4.0));
        assert!(close(s.elevation, PI / 4.0));
        assert!(close(s.range, 2.0));
    }

    #[test]
    fn origin_is_rejected() {
        assert!(matches!(
            cart_to_spherical(&Point::new(0.0, 0.0, 0.0, 0.0)),
            Err(Error::ZeroVector)
        ));
        assert!(matches!(
            cart_to_spherical(&Point::new(f64::NAN, 0.0, 0.0, 0.0)),
            Err(Error::NonFinite)
        ));
    }

    #[test]
    fn spherical_to_cart_axes() {
        let p = spherical_to_cart(
            &SphericalCoord {
                azimuth: 0.0,
                elevation: 0.0,
                range: 1.0,
            },
            0.3,
        );
        assert_eq!(p, Point::new(1.0, 0.0, 0.0, 0.3));
        let p = spherical_to_cart(
            &SphericalCoord {
                azimuth: PI,
                elevation: 0.0,
                range: 2.0,
            },
            0.0,
        );
        assert!(close(p.x, -2.0) && close(p.y, 0.0) && close(p.z, 0.0));
    }

    #[test]
    fn wrap_and_normalize() {
        assert_eq!(wrap_angle(-1e-300), 0.0);
        assert!(wrap_angle(-f64::EPSILON) < TAU);
        assert!(close(wrap_angle(-PI / 2.0), 1.5 * PI));
        assert!(close(normalize_yaw(PI), -PI));
        let y = normalize_yaw(3.0 * PI);
        assert!(close(y.abs(), PI) && (-PI..PI).contains(&y));
        assert!(close(normalize_yaw(-PI - 0.1), PI - 0.1));
        assert_eq!(normalize_yaw(0.25), 0.25);
    }

    #[test]
    fn axis_aligned_containment() {
        let b = Box3D::new([0.0; 3], [2.0, 2.0, 2.0], 0.0, 0);
        assert!(b.contains([0.5, 0.5, 0.5]));
        assert!(!b.contains([1.5, 0.0, 0.0]));
        // faces are inclusive
        assert!(b.contains([1.0, -1.0, 1.0]));
    }

    #[test]
    fn length_runs_along_heading() {
        let b = Box3D::new([0.0; 3], [1.0, 4.0, 1.0], PI / 2.0, 0);
        assert!(b.contains([0.0, 1.9, 0.0]));
        assert!(!b.contains([1.9, 0.0, 0.0]));
    }

    #[test]
    fn rotated_box_diagonal_point() {
        // yaw π/4, l = 1.9; the point (√2·0.9, 0, 0) sits at x' = 0.9, y' = -0.9
        let b = Box3D::new([0.0; 3], [2.0, 1.9, 2.0], PI / 4.0, 0);
        assert!(b.contains([2f64.sqrt() * 0.9, 0.0, 0.0]));
        let narrow = Box3D::new([0.0; 3], [1.7, 1.9, 2.0], PI / 4.0, 0);
        assert!(!narrow.contains([2f64.sqrt() * 0.9, 0.0, 0.0]));
    }

    #[test]
    fn identity_transform_is_bitwise() {
        let scene = Scene::new(
            vec![
                Point::new(-0.0, 3.5, -1.25, 0.5),
                Point::new(7.0, -2.0, 0.0, 1.0),
            ],
            vec![Box3D::new([1.0, 2.0, 0.0], [1.0, 2.0, 1.5], 0.3, 1)],
            DomainTag::Source,
        );
        let out = apply_rigid_transform(&scene, false, false, 0.0, 1.0).unwrap();
        assert_eq!(out, scene);
        assert!(out.points[0].x.is_sign_negative());
    }

    #[test]
    fn quarter_turn() {
        let scene = Scene::new(
            vec![Point::new(1.0, 0.0, 0.0, 0.0)],
            vec![],
            DomainTag::Source,
        );
        let out = apply_rigid_transform(&scene, false, false, PI / 2.0, 1.0).unwrap();
        assert!(close(out.points[0].x, 0.0) && close(out.points[0].y, 1.0));
    }

    #[test]
    fn non_positive_scale() {
        let scene = Scene::empty(DomainTag::Source);
        assert!(matches!(
            apply_rigid_transform(&scene, false, false, 0.0, 0.0),
            Err(Error::NonPositiveScale(_))
        ));
        assert!(apply_rigid_transform(&scene, false, false, 0.0, -1.0).is_err());
    }

    #[test]
    fn invalid_box_sizes() {
        assert!(Box3D::try_new([0.0; 3], [1.0, 0.0, 1.0], 0.0, 0).is_err());
        assert!(Box3D::try_new([0.0; 3], [1.0, 1.0, 1.0], f64::NAN, 0).is_err());
    }
}
