//! Central finite-difference check of a [`GradientProvider`].

use std::f64::consts::PI;

use rand::Rng;

use crate::adv::{GradientField, GradientProvider, SurrogateLoss};
use crate::error::Result;
use crate::geom::{Box3D, DomainTag, Point, Scene};

pub const DEFAULT_STEP: f64 = 1e-5;

/// Points stay at least this far from every box face, so a finite-difference
/// step never changes box membership.
const FACE_MARGIN: f64 = 1e-3;

/// Random scene with 1 to 3 disjoint boxes, points inside each box plus
/// background clutter. Fixtures whose per-box centroid norm sits near the
/// smooth-L1 knee are redrawn so the loss is smooth across the stencil.
pub fn random_fixture<R: Rng + ?Sized>(rng: &mut R, knee: f64) -> (Scene, Vec<Box3D>) {
    loop {
        let n_boxes = rng.random_range(1..=3);
        let mut boxes = Vec::with_capacity(n_boxes);
        let mut points = Vec::new();
        for k in 0..n_boxes {
            let az = k as f64 * 2.0 * PI / n_boxes as f64 + rng.random_range(-0.3..0.3);
            let r = rng.random_range(8.0..25.0);
            let b = Box3D::new(
                [r * az.cos(), r * az.sin(), rng.random_range(-1.0..0.5)],
                [
                    rng.random_range(1.5..2.5),
                    rng.random_range(3.0..5.0),
                    rng.random_range(1.2..2.0),
                ],
                rng.random_range(-PI..PI),
                0,
            );
            let (s, c) = b.yaw.sin_cos();
            let half = [
                0.5 * b.l - FACE_MARGIN,
                0.5 * b.w - FACE_MARGIN,
                0.5 * b.h - FACE_MARGIN,
            ];
            // skew the cloud so centroids land on both sides of the knee
            let bias = [
                rng.random_range(-0.8..0.8) * half[0],
                rng.random_range(-0.8..0.8) * half[1],
                rng.random_range(-0.5..0.5) * half[2],
            ];
            for _ in 0..rng.random_range(5..40) {
                let local: [f64; 3] = std::array::from_fn(|i| {
                    (bias[i] + rng.random_range(-0.5..0.5) * half[i]).clamp(-half[i], half[i])
                });
                points.push(Point::new(
                    b.cx + c * local[0] - s * local[1],
                    b.cy + s * local[0] + c * local[1],
                    b.cz + local[2],
                    0.5,
                ));
            }
            boxes.push(b);
        }
        for _ in 0..20 {
            let p = [
                rng.random_range(-40.0..40.0),
                rng.random_range(-40.0..40.0),
                -1.7,
            ];
            if boxes.iter().all(|b| !b.contains(p)) {
                points.push(Point::new(p[0], p[1], p[2], 0.1));
            }
        }
        let scene = Scene::new(points, boxes.clone(), DomainTag::TargetUnlabeled);
        if centroids_clear_of_knee(&scene, &boxes, knee) {
            return (scene, boxes);
        }
    }
}

fn centroids_clear_of_knee(scene: &Scene, boxes: &[Box3D], knee: f64) -> bool {
    boxes.iter().all(|b| {
        let local: Vec<[f64; 3]> = scene
            .points
            .iter()
            .filter(|p| b.contains(p.xyz()))
            .map(|p| b.to_box_frame(p.xyz()))
            .collect();
        let m = local.len() as f64;
        let c: [f64; 3] = std::array::from_fn(|i| local.iter().map(|q| q[i]).sum::<f64>() / m);
        let norm = (c[0] * c[0] + c[1] * c[1] + c[2] * c[2]).sqrt();
        (norm - knee).abs() > 1e-2
    })
}

/// Central differences of the provider's loss with respect to every point
/// coordinate.
pub fn numeric_gradient<P: GradientProvider + ?Sized>(
    provider: &P,
    scene: &Scene,
    boxes: &[Box3D],
    step: f64,
) -> Result<GradientField> {
    let mut probe = scene.clone();
    let mut grads = vec![[0.0; 3]; scene.points.len()];
    for (i, g) in grads.iter_mut().enumerate() {
        for (axis, slot) in g.iter_mut().enumerate() {
            let orig = scene.points[i].xyz()[axis];
            set_axis(&mut probe.points[i], axis, orig + step);
            let up = provider.loss_and_gradient(&probe, boxes)?.0;
            set_axis(&mut probe.points[i], axis, orig - step);
            let down = provider.loss_and_gradient(&probe, boxes)?.0;
            set_axis(&mut probe.points[i], axis, orig);
            *slot = (up - down) / (2.0 * step);
        }
    }
    Ok(GradientField { grads })
}

fn set_axis(p: &mut Point, axis: usize, v: f64) {
    match axis {
        0 => p.x = v,
        1 => p.y = v,
        _ => p.z = v,
    }
}

/// `‖a − n‖∞ / max(‖a‖∞, ‖n‖∞)`, zero when both fields vanish.
pub fn relative_error(analytic: &GradientField, numeric: &GradientField) -> f64 {
    let mut diff: f64 = 0.0;
    let mut scale: f64 = 0.0;
    for (a, n) in analytic.grads.iter().zip(&numeric.grads) {
        for k in 0..3 {
            diff = diff.max((a[k] - n[k]).abs());
            scale = scale.max(a[k].abs()).max(n[k].abs());
        }
    }
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

/// Worst relative error of the surrogate gradient over `fixtures` random
/// fixtures.
pub fn run_gradcheck<R: Rng + ?Sized>(
    rng: &mut R,
    fixtures: usize,
    step: f64,
    knee: f64,
) -> Result<f64> {
    let loss = SurrogateLoss::new(knee)?;
    let mut worst: f64 = 0.0;
    for _ in 0..fixtures {
        let (scene, boxes) = random_fixture(rng, knee);
        let (_, analytic) = loss.loss_and_gradient(&scene, &boxes)?;
        let numeric = numeric_gradient(&loss, &scene, &boxes, step)?;
        worst = worst.max(relative_error(&analytic, &numeric));
    }
    Ok(worst)
}
