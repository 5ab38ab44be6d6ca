//! Adversarial point augmentation, Point-MixUp and the box consistency loss.

use rand::Rng;

use crate::error::{Error, Result};
use crate::geom::{Box3D, DomainTag, Point, Scene};

/// Per-point loss gradients with respect to (x, y, z), index-aligned with a
/// scene's points.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct GradientField {
    pub grads: Vec<[f64; 3]>,
}

impl GradientField {
    pub fn zeros(n: usize) -> Self {
        Self {
            grads: vec![[0.0; 3]; n],
        }
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }
}

/// Supplies a detection loss against a set of boxes and its exact gradient
/// with respect to every point coordinate.
pub trait GradientProvider {
    fn loss_and_gradient(&self, scene: &Scene, boxes: &[Box3D]) -> Result<(f64, GradientField)>;
}

pub const DEFAULT_SMOOTH_L1_KNEE: f64 = 1.0;

/// Smooth-L1 with transition point `knee`.
pub fn smooth_l1(x: f64, knee: f64) -> f64 {
    let a = x.abs();
    if a < knee {
        0.5 * a * a / knee
    } else {
        a - 0.5 * knee
    }
}

/// Centroid-alignment regression loss.
///
/// For every box the in-box points are averaged in the box frame and the
/// distance of that centroid from the box origin goes through smooth-L1. The
/// loss is the mean over boxes; empty boxes contribute zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurrogateLoss {
    pub knee: f64,
}

impl Default for SurrogateLoss {
    fn default() -> Self {
        Self {
            knee: DEFAULT_SMOOTH_L1_KNEE,
        }
    }
}

impl SurrogateLoss {
    pub fn new(knee: f64) -> Result<Self> {
        if !(knee > 0.0 && knee.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "smooth-L1 knee must be positive, got {knee}"
            )));
        }
        Ok(Self { knee })
    }

    pub fn evaluate(&self, points: &[Point], boxes: &[Box3D]) -> Result<(f64, GradientField)> {
        if boxes.is_empty() {
            return Err(Error::EmptyBoxList);
        }
        let n_boxes = boxes.len() as f64;
        let mut grads = GradientField::zeros(points.len());
        let mut total = 0.0;
        let mut members = Vec::new();
        for b in boxes {
            members.clear();
            let mut sum = [0.0; 3];
            for (i, p) in points.iter().enumerate() {
                let local = b.to_box_frame(p.xyz());
                if local[0].abs() <= 0.5 * b.l
                    && local[1].abs() <= 0.5 * b.w
                    && local[2].abs() <= 0.5 * b.h
                {
                    members.push(i);
                    for k in 0..3 {
                        sum[k] += local[k];
                    }
                }
            }
            if members.is_empty() {
                continue;
            }
            let m = members.len() as f64;
            let centroid = sum.map(|s| s / m);
            let dist = (centroid[0].powi(2) + centroid[1].powi(2) + centroid[2].powi(2)).sqrt();
            total += smooth_l1(dist, self.knee);

            // d smooth_l1(|c|) / dc in the box frame
            let scale = if dist < self.knee {
                1.0 / self.knee
            } else {
                1.0 / dist
            };
            let g_local = centroid.map(|c| c * scale);
            // back to world axes: transpose of the world-to-box rotation
            let (s, c) = b.yaw.sin_cos();
            let g_world = [
                c * g_local[0] - s * g_local[1],
                s * g_local[0] + c * g_local[1],
                g_local[2],
            ];
            let per_point = 1.0 / (m * n_boxes);
            for &i in &members {
                for k in 0..3 {
                    grads.grads[i][k] += g_world[k] * per_point;
                }
            }
        }
        Ok((total / n_boxes, grads))
    }
}

impl GradientProvider for SurrogateLoss {
    fn loss_and_gradient(&self, scene: &Scene, boxes: &[Box3D]) -> Result<(f64, GradientField)> {
        self.evaluate(&scene.points, boxes)
    }
}

/// Convenience wrapper over [`SurrogateLoss::evaluate`] with the default knee.
pub fn surrogate_loss(scene: &Scene, boxes: &[Box3D]) -> Result<(f64, GradientField)> {
    SurrogateLoss::default().evaluate(&scene.points, boxes)
}

/// `ε · (−g) / ‖g‖₂` for one point gradient; zero gradients give zero.
pub fn point_delta(g: [f64; 3], epsilon: f64) -> [f64; 3] {
    // prescale so tiny gradients don't underflow the norm
    let amax = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if amax == 0.0 || !amax.is_finite() {
        return [0.0; 3];
    }
    let u = g.map(|v| v / amax);
    let norm = (u[0] * u[0] + u[1] * u[1] + u[2] * u[2]).sqrt();
    u.map(|v| -epsilon * v / norm)
}

/// Per-point perturbations along the normalized negative loss gradient.
pub fn perturbation_delta(field: &GradientField, epsilon: f64) -> Vec<[f64; 3]> {
    field
        .grads
        .iter()
        .map(|&g| point_delta(g, epsilon))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PerturbMode {
    Translate,
    Add,
    Remove,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerturbationConfig {
    /// Meters.
    pub epsilon: f64,
    /// Per-candidate selection probability.
    pub rho: f64,
    /// Translate, add, remove.
    pub mode_weights: [f64; 3],
}

impl Default for PerturbationConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.001,
            rho: 0.5,
            mode_weights: [1.0 / 3.0; 3],
        }
    }
}

impl PerturbationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        if !(0.0..=1.0).contains(&self.rho) {
            return Err(Error::InvalidParameter(format!(
                "rho {} outside [0, 1]",
                self.rho
            )));
        }
        if self
            .mode_weights
            .iter()
            .any(|w| !(*w >= 0.0 && w.is_finite()))
        {
            return Err(Error::InvalidParameter(
                "mode weights must be non-negative".into(),
            ));
        }
        let sum: f64 = self.mode_weights.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidParameter(format!(
                "mode weights sum to {sum}, expected 1"
            )));
        }
        Ok(())
    }

    fn draw_mode<R: Rng + ?Sized>(&self, rng: &mut R) -> PerturbMode {
        let u: f64 = rng.random();
        let [t, a, _] = self.mode_weights;
        if u < t {
            PerturbMode::Translate
        } else if u < t + a {
            PerturbMode::Add
        } else if self.mode_weights[2] > 0.0 {
            PerturbMode::Remove
        } else if a > 0.0 {
            // rounding pushed u past t + a with no removal mass
            PerturbMode::Add
        } else {
            PerturbMode::Translate
        }
    }
}

/// Bookkeeping from one [`adversarial_perturb`] call. Merges by addition.
#[derive(Debug, Clone, Copy, PartialEq, Default, serde::Serialize)]
pub struct PerturbStats {
    pub total_points: u64,
    pub candidates: u64,
    pub selected: u64,
    pub translated: u64,
    pub added: u64,
    pub removed: u64,
    /// Selected translate/add points left alone because their gradient is 0.
    pub zero_gradient: u64,
    /// Largest `|‖δ‖₂ − ε|` over applied translate/add perturbations.
    pub max_delta_norm_error: f64,
}

impl PerturbStats {
    pub fn merge(&mut self, other: &PerturbStats) {
        self.total_points += other.total_points;
        self.candidates += other.candidates;
        self.selected += other.selected;
        self.translated += other.translated;
        self.added += other.added;
        self.removed += other.removed;
        self.zero_gradient += other.zero_gradient;
        self.max_delta_norm_error = self.max_delta_norm_error.max(other.max_delta_norm_error);
    }

    pub fn perturbed(&self) -> u64 {
        self.translated + self.added + self.removed
    }
}

/// Translates, duplicates-with-offset or removes a random subset of the points
/// that lie inside `pseudo_boxes`.
///
/// Each candidate is selected with probability ρ and assigned one mode drawn
/// from the mode weights. Added points are appended after the surviving
/// originals; points outside every box are copied unchanged. The output
/// carries `pseudo_boxes` as its labels.
pub fn adversarial_perturb<P, R>(
    scene: &Scene,
    pseudo_boxes: &[Box3D],
    provider: &P,
    cfg: &PerturbationConfig,
    rng: &mut R,
) -> Result<(Scene, PerturbStats)>
where
    P: GradientProvider + ?Sized,
    R: Rng + ?Sized,
{
    cfg.validate()?;
    let mut stats = PerturbStats {
        total_points: scene.points.len() as u64,
        ..Default::default()
    };
    let mut out = Scene {
        points: Vec::with_capacity(scene.points.len()),
        boxes: pseudo_boxes.to_vec(),
        domain: scene.domain,
        pseudo_labeled: true,
    };
    if pseudo_boxes.is_empty() {
        out.points = scene.points.clone();
        return Ok((out, stats));
    }

    let (_, field) = provider.loss_and_gradient(scene, pseudo_boxes)?;
    if field.len() != scene.points.len() {
        return Err(Error::InvalidParameter(format!(
            "gradient field has {} entries for {} points",
            field.len(),
            scene.points.len()
        )));
    }

    let mut appended = Vec::new();
    for (p, &g) in scene.points.iter().zip(&field.grads) {
        let xyz = p.xyz();
        if !pseudo_boxes.iter().any(|b| b.contains(xyz)) {
            out.points.push(*p);
            continue;
        }
        stats.candidates += 1;
        if !(rng.random::<f64>() < cfg.rho) {
            out.points.push(*p);
            continue;
        }
        stats.selected += 1;
        let mode = cfg.draw_mode(rng);
        if mode == PerturbMode::Remove {
            stats.removed += 1;
            continue;
        }
        let delta = point_delta(g, cfg.epsilon);
        if delta == [0.0; 3] {
            stats.zero_gradient += 1;
            out.points.push(*p);
            continue;
        }
        let norm = (delta[0] * delta[0] + delta[1] * delta[1] + delta[2] * delta[2]).sqrt();
        stats.max_delta_norm_error = stats.max_delta_norm_error.max((norm - cfg.epsilon).abs());
        let moved = Point::new(p.x + delta[0], p.y + delta[1], p.z + delta[2], p.intensity);
        match mode {
            PerturbMode::Translate => {
                stats.translated += 1;
                out.points.push(moved);
            }
            PerturbMode::Add => {
                stats.added += 1;
                out.points.push(*p);
                appended.push(moved);
            }
            PerturbMode::Remove => unreachable!(),
        }
    }
    out.points.extend(appended);
    Ok((out, stats))
}

/// Concatenates two target-domain scenes: `a`'s points and boxes, then `b`'s.
pub fn point_mixup(a: &Scene, b: &Scene) -> Scene {
    let mut out = a.clone();
    out.points.extend_from_slice(&b.points);
    out.boxes.extend_from_slice(&b.boxes);
    out.domain = DomainTag::Mixed;
    out.pseudo_labeled = a.pseudo_labeled || b.pseudo_labeled;
    out
}

fn box_distance(a: &Box3D, b: &Box3D) -> f64 {
    let (u, v) = (a.center_size(), b.center_size());
    u.iter()
        .zip(&v)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

fn nearest_sum(from: &[Box3D], to: &[Box3D]) -> f64 {
    from.iter()
        .map(|a| {
            to.iter()
                .map(|b| box_distance(a, b))
                .fold(f64::INFINITY, f64::min)
        })
        .sum()
}

/// Bidirectional nearest-box distance over (cx, cy, cz, w, l, h), averaged
/// over all boxes on both sides. Heading and score are ignored.
pub fn consistency_loss(boxes_am: &[Box3D], boxes_pm: &[Box3D]) -> Result<f64> {
    match (boxes_am.is_empty(), boxes_pm.is_empty()) {
        (true, true) => Ok(0.0),
        (true, false) | (false, true) => Err(Error::OneSidedEmpty),
        (false, false) => {
            let total = nearest_sum(boxes_am, boxes_pm) + nearest_sum(boxes_pm, boxes_am);
            Ok(total / (boxes_am.len() + boxes_pm.len()) as f64)
        }
    }
}

/// Mean consistency over samples where it is defined; one-sided-empty
/// samples are left out of both numerator and denominator.
pub fn batch_consistency(samples: &[(Vec<Box3D>, Vec<Box3D>)]) -> f64 {
    let defined: Vec<f64> = samples
        .iter()
        .filter_map(|(am, pm)| consistency_loss(am, pm).ok())
        .collect();
    mean_or_zero(&defined)
}

pub(crate) fn mean_or_zero(values: &[f64]) -> f64 {
    if values.is_empty() {
        0.0
    } else {
        values.iter().sum::<f64>() / values.len() as f64
    }
}
