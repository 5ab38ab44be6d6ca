//! Synthetic LiDAR scenes: a flat ground swept by the beams of a sensor plus
//! car-sized objects, each densely sampled inside its ground-truth box.

use std::f64::consts::{PI, TAU};

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::Result;
use crate::geom::{Box3D, DomainTag, Point, Scene};
use crate::pipeline::{Datasets, PipelineConfig};
use crate::sensor::SensorSpec;

pub const SENSOR_HEIGHT: f64 = 1.73;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseParams {
    /// Standard deviation of the ground range noise, metres.
    pub range_sigma: f64,
    pub max_range: f64,
    /// Ground returns are kept on every `column_stride`-th column.
    pub column_stride: usize,
    pub points_per_object: usize,
}

impl Default for NoiseParams {
    fn default() -> Self {
        Self {
            range_sigma: 0.02,
            max_range: 50.0,
            column_stride: 8,
            points_per_object: 60,
        }
    }
}

const MIN_OBJECT_POINTS: usize = 20;
const OBJECT_RANGE: (f64, f64) = (8.0, 40.0);
const MIN_SEPARATION: f64 = 6.0;
/// Sampled points stay this far inside every box face.
const INSET: f64 = 0.05;

fn ground<R: Rng + ?Sized>(rng: &mut R, spec: &SensorSpec, noise: &NoiseParams) -> Vec<Point> {
    let sigma = Normal::new(0.0, noise.range_sigma.max(0.0)).expect("finite sigma");
    let stride = noise.column_stride.max(1);
    let mut out = Vec::new();
    for row in 0..spec.channels {
        let el = spec.row_center(row);
        if el >= 0.0 {
            continue;
        }
        let r0 = SENSOR_HEIGHT / (-el).tan() / el.cos();
        if r0 > noise.max_range {
            continue;
        }
        for col in (0..spec.points_per_channel).step_by(stride) {
            let az = spec.col_center(col);
            let r = (r0 + sigma.sample(rng)).max(0.5);
            let (ce, se) = (el.cos(), el.sin());
            out.push(Point::new(
                r * ce * az.cos(),
                r * ce * az.sin(),
                r * se,
                rng.random_range(0.0..0.3),
            ));
        }
    }
    out
}

fn in_vfov(spec: &SensorSpec, p: [f64; 3]) -> bool {
    let el = p[2].atan2(p[0].hypot(p[1]));
    el >= spec.vfov_min && el <= spec.vfov_max
}

/// A scene with `n_objects` boxes, each holding at least 20 points inside
/// the sensor's vertical field of view. Objects that cannot be placed
/// without overlapping earlier ones are skipped after a bounded search.
pub fn synthesize_scene<R: Rng + ?Sized>(
    rng: &mut R,
    n_objects: usize,
    spec: &SensorSpec,
    noise: &NoiseParams,
) -> Scene {
    let mut points = ground(rng, spec, noise);
    let mut boxes: Vec<Box3D> = Vec::with_capacity(n_objects);
    let per_object = noise.points_per_object.max(MIN_OBJECT_POINTS);

    for _ in 0..n_objects {
        for _ in 0..100 {
            let r = rng.random_range(OBJECT_RANGE.0..OBJECT_RANGE.1);
            let az = rng.random_range(0.0..TAU);
            let (cx, cy) = (r * az.cos(), r * az.sin());
            if boxes
                .iter()
                .any(|b| (b.cx - cx).hypot(b.cy - cy) < MIN_SEPARATION)
            {
                continue;
            }
            let w = rng.random_range(1.6..2.0);
            let l = rng.random_range(3.8..4.8);
            let h = rng.random_range(1.4..1.7);
            let yaw = rng.random_range(-PI..PI);
            let cz = -SENSOR_HEIGHT + 0.5 * h + 0.02;
            let b = Box3D::new([cx, cy, cz], [w, l, h], yaw, 1);

            let (sy, cyaw) = yaw.sin_cos();
            let mut cluster = Vec::with_capacity(per_object);
            let mut tries = 0;
            while cluster.len() < per_object && tries < 20 * per_object {
                tries += 1;
                let lx = rng.random_range(-(0.5 * l - INSET)..(0.5 * l - INSET));
                let ly = rng.random_range(-(0.5 * w - INSET)..(0.5 * w - INSET));
                let lz = rng.random_range(-(0.5 * h - INSET)..(0.5 * h - INSET));
                let p = [cx + cyaw * lx - sy * ly, cy + sy * lx + cyaw * ly, cz + lz];
                if in_vfov(spec, p) {
                    cluster.push(Point::new(p[0], p[1], p[2], rng.random_range(0.3..1.0)));
                }
            }
            if cluster.len() < MIN_OBJECT_POINTS {
                continue;
            }
            points.extend(cluster);
            boxes.push(b);
            break;
        }
    }
    Scene::new(points, boxes, DomainTag::Source)
}

/// Scene counts for [`synthesize_dataset`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DatasetSizes {
    pub source: usize,
    pub target_labeled: usize,
    pub target_unlabeled: usize,
}

impl Default for DatasetSizes {
    fn default() -> Self {
        Self {
            source: 20,
            target_labeled: 4,
            target_unlabeled: 16,
        }
    }
}

/// Source scenes on `cfg.source_sensor`, target scenes on `cfg.target_sensor`.
/// Unlabeled target scenes lose their boxes.
pub fn synthesize_dataset<R: Rng + ?Sized>(
    rng: &mut R,
    cfg: &PipelineConfig,
    sizes: DatasetSizes,
    noise: &NoiseParams,
) -> Result<Datasets> {
    cfg.validate()?;
    let mut make = |n: usize, spec: &SensorSpec, domain: DomainTag| -> Vec<Scene> {
        (0..n)
            .map(|_| {
                let k = rng.random_range(3..=6);
                let mut s = synthesize_scene(rng, k, spec, noise).with_domain(domain);
                if domain == DomainTag::TargetUnlabeled {
                    s.boxes.clear();
                }
                s
            })
            .collect()
    };
    Ok(Datasets {
        source: make(sizes.source, &cfg.source_sensor, DomainTag::Source),
        target_labeled: make(
            sizes.target_labeled,
            &cfg.target_sensor,
            DomainTag::TargetLabeled,
        ),
        target_unlabeled: make(
            sizes.target_unlabeled,
            &cfg.target_sensor,
            DomainTag::TargetUnlabeled,
        ),
    })
}
