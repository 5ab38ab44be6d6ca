//! Two-stage orchestration: TargetMix over source + labeled target scenes,
//! then pseudo-labeling and AdvMix over labeled + unlabeled target scenes.
//!
//! Detectors are abstracted behind [`DetectorOracle`]. "Training" here is a
//! loss-evaluation pass whose results are accumulated into a [`StageReport`];
//! the reference oracle has no trainable parameters.

use std::collections::{BTreeMap, VecDeque};
use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::adv::{
    adversarial_perturb, consistency_loss, mean_or_zero, point_mixup, GradientField,
    GradientProvider, PerturbStats, PerturbationConfig, SurrogateLoss,
};
use crate::error::{Error, Result};
use crate::geom::{apply_rigid_transform, Box3D, DomainTag, Scene};
use crate::mix::{targetmix_sample, MaskParams};
use crate::sensor::{lidar_distribution_match, lidar_distribution_match_random_offset, SensorSpec};

/// A detector as seen by the pipeline: predictions plus a differentiable
/// detection loss. Implementations are read-only during both stages.
pub trait DetectorOracle: GradientProvider + Sync {
    fn predict(&self, scene: &Scene) -> Vec<Box3D>;

    /// Detection loss against `labels`; a scene without labels has no
    /// regression targets and scores zero.
    fn detection_loss(&self, scene: &Scene, labels: &[Box3D]) -> Result<f64> {
        if labels.is_empty() {
            return Ok(0.0);
        }
        Ok(self.loss_and_gradient(scene, labels)?.0)
    }
}

/// Reference detector: BEV grid connected components fitted with
/// axis-aligned boxes, scored by point count.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterOracle {
    pub cell_size: f64,
    pub min_points: usize,
    /// Point count at which the score saturates at 1.
    pub score_saturation: f64,
    /// Points at or below this height are treated as ground and ignored.
    pub min_z: Option<f64>,
    pub loss: SurrogateLoss,
}

impl Default for ClusterOracle {
    fn default() -> Self {
        Self {
            cell_size: 1.0,
            min_points: 5,
            score_saturation: 50.0,
            min_z: Some(-1.5),
            loss: SurrogateLoss::default(),
        }
    }
}

impl ClusterOracle {
    pub fn with_knee(knee: f64) -> Result<Self> {
        Ok(Self {
            loss: SurrogateLoss::new(knee)?,
            ..Default::default()
        })
    }

    /// Slack added to each fitted extent so boundary points stay inside.
    const PAD: f64 = 0.1;
}

impl GradientProvider for ClusterOracle {
    fn loss_and_gradient(&self, scene: &Scene, boxes: &[Box3D]) -> Result<(f64, GradientField)> {
        self.loss.loss_and_gradient(scene, boxes)
    }
}

impl DetectorOracle for ClusterOracle {
    fn predict(&self, scene: &Scene) -> Vec<Box3D> {
        let mut cells: BTreeMap<(i64, i64), Vec<usize>> = BTreeMap::new();
        for (i, p) in scene.points.iter().enumerate() {
            if self.min_z.is_some_and(|z| p.z <= z) || !p.is_finite() {
                continue;
            }
            let key = (
                (p.x / self.cell_size).floor() as i64,
                (p.y / self.cell_size).floor() as i64,
            );
            cells.entry(key).or_default().push(i);
        }

        let mut seen: BTreeMap<(i64, i64), bool> = cells.keys().map(|k| (*k, false)).collect();
        let mut boxes = Vec::new();
        let keys: Vec<(i64, i64)> = cells.keys().copied().collect();
        for start in keys {
            if seen[&start] {
                continue;
            }
            seen.insert(start, true);
            let mut members = Vec::new();
            let mut queue = VecDeque::from([start]);
            while let Some((cx, cy)) = queue.pop_front() {
                members.extend_from_slice(&cells[&(cx, cy)]);
                for dx in -1..=1 {
                    for dy in -1..=1 {
                        let n = (cx + dx, cy + dy);
                        if let Some(flag) = seen.get_mut(&n) {
                            if !*flag {
                                *flag = true;
                                queue.push_back(n);
                            }
                        }
                    }
                }
            }
            if members.len() < self.min_points {
                continue;
            }
            let mut lo = [f64::INFINITY; 3];
            let mut hi = [f64::NEG_INFINITY; 3];
            for &i in &members {
                for (k, v) in scene.points[i].xyz().into_iter().enumerate() {
                    lo[k] = lo[k].min(v);
                    hi[k] = hi[k].max(v);
                }
            }
            let center = [0, 1, 2].map(|k| 0.5 * (lo[k] + hi[k]));
            let ext = [0, 1, 2].map(|k| hi[k] - lo[k] + Self::PAD);
            // yaw 0: length along x, width along y
            let score = (members.len() as f64 / self.score_saturation).min(1.0);
            boxes.push(Box3D::new(center, [ext[1], ext[0], ext[2]], 0.0, 0).with_score(score));
        }
        boxes
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub source_sensor: SensorSpec,
    pub target_sensor: SensorSpec,
    pub p_tm: f64,
    pub p_am: f64,
    /// Consistency weight in the stage-2 loss.
    pub lambda: f64,
    pub perturbation: PerturbationConfig,
    pub mask: MaskParams,
    pub epochs_tm: usize,
    pub epochs_am: usize,
    pub pseudo_score_threshold: f64,
    pub seed: u64,
    pub smooth_l1_knee: f64,
    /// Draw the distribution-matching stride offsets per scene.
    pub random_stride_offset: bool,
    /// Random flip/rotation/scaling of labeled target scenes in stage 2.
    pub rigid_augment: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            source_sensor: SensorSpec::waymo(),
            target_sensor: SensorSpec::nuscenes(),
            p_tm: 0.4,
            p_am: 0.6,
            lambda: 1.0,
            perturbation: PerturbationConfig::default(),
            mask: MaskParams::default(),
            epochs_tm: 2,
            epochs_am: 2,
            pseudo_score_threshold: 0.3,
            seed: 0,
            smooth_l1_knee: 1.0,
            random_stride_offset: false,
            rigid_augment: true,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.source_sensor.validate()?;
        self.target_sensor.validate()?;
        for (name, p) in [
            ("p_tm", self.p_tm),
            ("p_am", self.p_am),
            ("pseudo_score_threshold", self.pseudo_score_threshold),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidParameter(format!(
                    "{name} = {p} outside [0, 1]"
                )));
            }
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "lambda must be non-negative, got {}",
                self.lambda
            )));
        }
        if self.epochs_tm == 0 || self.epochs_am == 0 {
            return Err(Error::InvalidParameter("epochs must be at least 1".into()));
        }
        if !(self.smooth_l1_knee > 0.0 && self.smooth_l1_knee.is_finite()) {
            return Err(Error::InvalidParameter(
                "smooth_l1_knee must be positive".into(),
            ));
        }
        self.perturbation.validate()?;
        self.mask.validate()
    }

    /// The reference oracle configured with this run's smooth-L1 knee.
    pub fn reference_oracle(&self) -> Result<ClusterOracle> {
        ClusterOracle::with_knee(self.smooth_l1_knee)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
enum Stream {
    MatchOffsets = 1,
    TargetMix = 2,
    AdvMix = 3,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Counter-based generator for one (stream, epoch, slot); independent of the
/// order in which slots are processed.
fn derive_rng(seed: u64, stream: Stream, epoch: u64, slot: u64) -> ChaCha8Rng {
    let mut h = splitmix64(seed);
    for word in [stream as u64, epoch, slot] {
        h = splitmix64(h ^ word);
    }
    ChaCha8Rng::seed_from_u64(h)
}

const PERMUTATION_SLOT: u64 = u64::MAX;

fn epoch_permutation(seed: u64, stream: Stream, epoch: u64, n: usize) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut derive_rng(seed, stream, epoch, PERMUTATION_SLOT));
    perm
}

/// Random flip, rotation and scaling, applied to labeled target scenes only.
/// Every other domain passes through untouched and reports `false`.
pub fn rigid_augment_gate<R: Rng + ?Sized>(
    scene: &Scene,
    rng: &mut R,
    enabled: bool,
) -> Result<(Scene, bool)> {
    if !enabled || scene.domain != DomainTag::TargetLabeled {
        return Ok((scene.clone(), false));
    }
    let flip_x = rng.random_bool(0.5);
    let flip_y = rng.random_bool(0.5);
    let rot = rng.random_range(-PI / 4.0..=PI / 4.0);
    let scale = rng.random_range(0.95..=1.05);
    Ok((
        apply_rigid_transform(scene, flip_x, flip_y, rot, scale)?,
        true,
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochReport {
    pub epoch: usize,
    pub samples: u64,
    pub mixed_samples: u64,
    pub mixed_fraction: f64,
    /// Stage 1: mean detection loss. Stage 2: mean of L_det(AM) + L_det(PM).
    pub mean_detection_loss: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_detection_loss_am: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_detection_loss_pm: Option<f64>,
    pub mean_consistency_loss: f64,
    pub consistency_samples: u64,
    pub consistency_skipped: u64,
    /// `mean_detection_loss + lambda * mean_consistency_loss`.
    pub mean_total_loss: f64,
    pub min_sample_loss: f64,
    pub nonfinite_samples: u64,
    pub rigid_augmented: u64,
    pub perturb: PerturbStats,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageReport {
    pub stage: String,
    pub epochs: Vec<EpochReport>,
    pub scenes_processed: u64,
    pub mixed_fraction: f64,
    pub pseudo_boxes_kept: u64,
    pub pseudo_boxes_discarded: u64,
    pub perturb: PerturbStats,
}

impl StageReport {
    fn new(stage: &str, epochs: Vec<EpochReport>) -> Self {
        let scenes_processed = epochs.iter().map(|e| e.samples).sum();
        let mixed: u64 = epochs.iter().map(|e| e.mixed_samples).sum();
        let mut perturb = PerturbStats::default();
        for e in &epochs {
            perturb.merge(&e.perturb);
        }
        Self {
            stage: stage.to_string(),
            epochs,
            scenes_processed,
            mixed_fraction: fraction(mixed, scenes_processed),
            pseudo_boxes_kept: 0,
            pseudo_boxes_discarded: 0,
            perturb,
        }
    }

    /// One `key=value` line per epoch plus a closing summary line.
    pub fn log_lines(&self) -> Vec<String> {
        let mut lines: Vec<String> = self
            .epochs
            .iter()
            .map(|e| {
                format!(
                    "stage={} epoch={} samples={} mixed_fraction={:.6} det_loss={:.9e} cons_loss={:.9e} \
                     total_loss={:.9e} cons_skipped={} translated={} added={} removed={}",
                    self.stage,
                    e.epoch,
                    e.samples,
                    e.mixed_fraction,
                    e.mean_detection_loss,
                    e.mean_consistency_loss,
                    e.mean_total_loss,
                    e.consistency_skipped,
                    e.perturb.translated,
                    e.perturb.added,
                    e.perturb.removed
                )
            })
            .collect();
        lines.push(format!(
            "stage={} done scenes={} mixed_fraction={:.6} pseudo_kept={} pseudo_discarded={} candidates={} perturbed={}",
            self.stage,
            self.scenes_processed,
            self.mixed_fraction,
            self.pseudo_boxes_kept,
            self.pseudo_boxes_discarded,
            self.perturb.candidates,
            self.perturb.perturbed()
        ));
        lines
    }
}

fn fraction(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

#[derive(Debug, Clone, Default)]
struct SampleOutcome {
    mixed: bool,
    det_am: f64,
    det_pm: Option<f64>,
    consistency: Option<f64>,
    consistency_attempted: bool,
    rigid_augmented: bool,
    perturb: PerturbStats,
}

fn summarize_epoch(
    epoch: usize,
    outcomes: &[SampleOutcome],
    lambda: f64,
    two_branch: bool,
) -> EpochReport {
    let samples = outcomes.len() as u64;
    let mixed_samples = outcomes.iter().filter(|o| o.mixed).count() as u64;
    let det: Vec<f64> = outcomes
        .iter()
        .map(|o| o.det_am + o.det_pm.unwrap_or(0.0))
        .collect();
    let cons: Vec<f64> = outcomes.iter().filter_map(|o| o.consistency).collect();
    let skipped = outcomes
        .iter()
        .filter(|o| o.consistency_attempted && o.consistency.is_none())
        .count() as u64;
    let mean_detection_loss = mean_or_zero(&det);
    let mean_consistency_loss = mean_or_zero(&cons);
    let per_sample: Vec<f64> = outcomes
        .iter()
        .zip(&det)
        .map(|(o, d)| d + lambda * o.consistency.unwrap_or(0.0))
        .collect();
    let mut perturb = PerturbStats::default();
    for o in outcomes {
        perturb.merge(&o.perturb);
    }
    let branch_mean = |f: fn(&SampleOutcome) -> f64| {
        two_branch.then(|| mean_or_zero(&outcomes.iter().map(f).collect::<Vec<_>>()))
    };
    EpochReport {
        epoch,
        samples,
        mixed_samples,
        mixed_fraction: fraction(mixed_samples, samples),
        mean_detection_loss,
        mean_detection_loss_am: branch_mean(|o| o.det_am),
        mean_detection_loss_pm: branch_mean(|o| o.det_pm.unwrap_or(0.0)),
        mean_consistency_loss,
        consistency_samples: cons.len() as u64,
        consistency_skipped: skipped,
        mean_total_loss: mean_detection_loss + lambda * mean_consistency_loss,
        min_sample_loss: per_sample.iter().copied().reduce(f64::min).unwrap_or(0.0),
        nonfinite_samples: per_sample.iter().filter(|v| !v.is_finite()).count() as u64,
        rigid_augmented: outcomes.iter().filter(|o| o.rigid_augmented).count() as u64,
        perturb,
    }
}

/// Matches every source scene to the target sensor once.
pub fn match_sources(cfg: &PipelineConfig, source: &[Scene]) -> Result<Vec<Scene>> {
    source
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            if cfg.random_stride_offset {
                let mut rng = derive_rng(cfg.seed, Stream::MatchOffsets, 0, i as u64);
                lidar_distribution_match_random_offset(
                    s,
                    &cfg.source_sensor,
                    &cfg.target_sensor,
                    &mut rng,
                )
            } else {
                lidar_distribution_match(s, &cfg.source_sensor, &cfg.target_sensor)
            }
        })
        .collect()
}

/// Stage 1. Matches the source scenes, then for each epoch walks a shuffled
/// order over all source and labeled-target slots, drawing TargetMix samples
/// and evaluating the oracle's detection loss on each.
pub fn run_targetmix_stage<O: DetectorOracle + ?Sized>(
    cfg: &PipelineConfig,
    source: &[Scene],
    target_labeled: &[Scene],
    oracle: &O,
) -> Result<StageReport> {
    cfg.validate()?;
    if source.is_empty() {
        return Err(Error::EmptyDataset("source"));
    }
    if target_labeled.is_empty() {
        return Err(Error::EmptyDataset("target_labeled"));
    }
    for s in target_labeled {
        s.expect_domain(DomainTag::TargetLabeled)?;
    }
    let matched = match_sources(cfg, source)?;
    let (n_s, n_tl) = (matched.len(), target_labeled.len());

    let mut epochs = Vec::with_capacity(cfg.epochs_tm);
    for epoch in 1..=cfg.epochs_tm {
        let perm = epoch_permutation(cfg.seed, Stream::TargetMix, epoch as u64, n_s + n_tl);
        let outcomes: Vec<SampleOutcome> = perm
            .par_iter()
            .enumerate()
            .map(|(slot, &v)| {
                let mut rng = derive_rng(cfg.seed, Stream::TargetMix, epoch as u64, slot as u64);
                let (s_idx, t_idx) = if v < n_s {
                    (v, rng.random_range(0..n_tl))
                } else {
                    (rng.random_range(0..n_s), v - n_s)
                };
                let drawn = targetmix_sample(
                    &mut rng,
                    cfg.p_tm,
                    &matched[s_idx],
                    &target_labeled[t_idx],
                    &cfg.mask,
                )?;
                let mixed = drawn.domain == DomainTag::Mixed;
                let scene = match (mixed, v < n_s) {
                    (true, _) | (false, true) => drawn,
                    (false, false) => target_labeled[t_idx].clone(),
                };
                let loss = oracle.detection_loss(&scene, &scene.boxes)?;
                Ok(SampleOutcome {
                    mixed,
                    det_am: loss,
                    ..Default::default()
                })
            })
            .collect::<Result<_>>()?;
        let report = summarize_epoch(epoch, &outcomes, 0.0, false);
        log::info!(
            "{}",
            StageReport::new("targetmix", vec![report.clone()]).log_lines()[0]
        );
        epochs.push(report);
    }
    Ok(StageReport::new("targetmix", epochs))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct PseudoLabelStats {
    pub kept: u64,
    pub discarded: u64,
}

/// Attaches the oracle's predictions scoring at least `threshold`.
pub fn generate_pseudo_labels<O: DetectorOracle + ?Sized>(
    oracle: &O,
    unlabeled: &[Scene],
    threshold: f64,
) -> Result<(Vec<Scene>, PseudoLabelStats)> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(Error::InvalidParameter(format!(
            "threshold {threshold} outside [0, 1]"
        )));
    }
    let per_scene: Vec<(Scene, PseudoLabelStats)> = unlabeled
        .par_iter()
        .map(|scene| {
            let predictions = oracle.predict(scene);
            let total = predictions.len() as u64;
            let kept: Vec<Box3D> = predictions
                .into_iter()
                .filter(|b| b.score.unwrap_or(0.0) >= threshold)
                .collect();
            let stats = PseudoLabelStats {
                kept: kept.len() as u64,
                discarded: total - kept.len() as u64,
            };
            let labeled = Scene {
                points: scene.points.clone(),
                boxes: kept,
                domain: DomainTag::TargetUnlabeled,
                pseudo_labeled: true,
            };
            (labeled, stats)
        })
        .collect();
    let mut stats = PseudoLabelStats::default();
    let scenes = per_scene
        .into_iter()
        .map(|(s, st)| {
            stats.kept += st.kept;
            stats.discarded += st.discarded;
            s
        })
        .collect();
    Ok((scenes, stats))
}

/// One stage-2 training pair.
#[derive(Debug, Clone, PartialEq)]
pub struct AdvMixDraw {
    pub am: Scene,
    pub pm: Scene,
    /// Point-MixUp was applied.
    pub mixed: bool,
    pub rigid_augmented: bool,
    pub perturb: PerturbStats,
}

/// Builds the AM/PM branches for one labeled and one pseudo-labeled scene.
///
/// The labeled scene passes the rigid-augmentation gate, the unlabeled scene
/// is perturbed with the teacher's gradients, and with probability `p_am`
/// both branches are Point-MixUps with the labeled scene (AM on the
/// adversarial scene, PM on the clean one). Otherwise AM is the clean
/// unlabeled scene and PM the adversarial one.
pub fn advmix_sample<T, R>(
    rng: &mut R,
    cfg: &PipelineConfig,
    labeled: &Scene,
    unlabeled: &Scene,
    teacher: &T,
) -> Result<AdvMixDraw>
where
    T: GradientProvider + ?Sized,
    R: Rng + ?Sized,
{
    let (labeled, rigid_augmented) = rigid_augment_gate(labeled, rng, cfg.rigid_augment)?;
    let (adversarial, perturb) =
        adversarial_perturb(unlabeled, &unlabeled.boxes, teacher, &cfg.perturbation, rng)?;
    let mixed = rng.random::<f64>() < cfg.p_am;
    let (am, pm) = if mixed {
        (point_mixup(&labeled, &adversarial), point_mixup(&labeled, unlabeled))
    } else {
        (unlabeled.clone(), adversarial)
    };
    Ok(AdvMixDraw {
        am,
        pm,
        mixed,
        rigid_augmented,
        perturb,
    })
}

/// Stage 2. Each sample pairs a labeled and a pseudo-labeled target scene,
/// perturbs the latter with the frozen teacher's gradients, forms the AM/PM
/// branches (Point-MixUp with probability `p_am`, otherwise AM = raw
/// unlabeled and PM = adversarial) and evaluates the student on both.
pub fn run_advmix_stage<T, S>(
    cfg: &PipelineConfig,
    target_labeled: &[Scene],
    pseudo_labeled: &[Scene],
    teacher: &T,
    student: &S,
) -> Result<StageReport>
where
    T: DetectorOracle + ?Sized,
    S: DetectorOracle + ?Sized,
{
    cfg.validate()?;
    if target_labeled.is_empty() {
        return Err(Error::EmptyDataset("target_labeled"));
    }
    for s in target_labeled {
        s.expect_domain(DomainTag::TargetLabeled)?;
    }
    for s in pseudo_labeled {
        s.expect_domain(DomainTag::TargetUnlabeled)?;
    }
    let (n_tl, n_tu) = (target_labeled.len(), pseudo_labeled.len());
    let slots = if n_tu == 0 { 0 } else { n_tl + n_tu };

    let mut epochs = Vec::with_capacity(cfg.epochs_am);
    for epoch in 1..=cfg.epochs_am {
        let perm = epoch_permutation(cfg.seed, Stream::AdvMix, epoch as u64, slots);
        let outcomes: Vec<SampleOutcome> = perm
            .par_iter()
            .enumerate()
            .map(|(slot, &v)| {
                let mut rng = derive_rng(cfg.seed, Stream::AdvMix, epoch as u64, slot as u64);
                let (tl_idx, tu_idx) = if v < n_tl {
                    (v, rng.random_range(0..n_tu))
                } else {
                    (rng.random_range(0..n_tl), v - n_tl)
                };
                let draw = advmix_sample(
                    &mut rng,
                    cfg,
                    &target_labeled[tl_idx],
                    &pseudo_labeled[tu_idx],
                    teacher,
                )?;
                let AdvMixDraw {
                    am,
                    pm,
                    mixed,
                    rigid_augmented,
                    perturb,
                } = draw;
                let det_am = student.detection_loss(&am, &am.boxes)?;
                let det_pm = student.detection_loss(&pm, &pm.boxes)?;
                let consistency =
                    match consistency_loss(&student.predict(&am), &student.predict(&pm)) {
                        Ok(v) => Some(v),
                        Err(Error::OneSidedEmpty) => None,
                        Err(e) => return Err(e),
                    };
                Ok(SampleOutcome {
                    mixed,
                    det_am,
                    det_pm: Some(det_pm),
                    consistency,
                    consistency_attempted: true,
                    rigid_augmented,
                    perturb,
                })
            })
            .collect::<Result<_>>()?;
        let report = summarize_epoch(epoch, &outcomes, cfg.lambda, true);
        log::info!(
            "{}",
            StageReport::new("advmix", vec![report.clone()]).log_lines()[0]
        );
        epochs.push(report);
    }
    Ok(StageReport::new("advmix", epochs))
}

/// The three dataset roles consumed by [`run_full`].
#[derive(Debug, Clone, Default)]
pub struct Datasets {
    pub source: Vec<Scene>,
    pub target_labeled: Vec<Scene>,
    pub target_unlabeled: Vec<Scene>,
}

/// Stage 1, pseudo-labeling with the stage-1 oracle as frozen teacher, then
/// stage 2 with a student cloned from the teacher.
pub fn run_full<O: DetectorOracle + Clone>(
    cfg: &PipelineConfig,
    data: &Datasets,
    oracle: &O,
) -> Result<(StageReport, StageReport)> {
    let first = run_targetmix_stage(cfg, &data.source, &data.target_labeled, oracle)?;
    let teacher = oracle;
    let student = teacher.clone();
    let (pseudo, stats) =
        generate_pseudo_labels(teacher, &data.target_unlabeled, cfg.pseudo_score_threshold)?;
    let mut second = run_advmix_stage(cfg, &data.target_labeled, &pseudo, teacher, &student)?;
    second.pseudo_boxes_kept = stats.kept;
    second.pseudo_boxes_discarded = stats.discarded;
    Ok((first, second))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::Point;

    fn cluster(center: [f64; 3], n: usize, rng: &mut ChaCha8Rng) -> Vec<Point> {
        (0..n)
            .map(|_| {
                Point::new(
                    center[0] + rng.random_range(-0.8..0.8),
                    center[1] + rng.random_range(-0.8..0.8),
                    center[2] + rng.random_range(-0.5..0.5),
                    0.5,
                )
            })
            .collect()
    }

    #[test]
    fn oracle_finds_planted_clusters() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let centers = [[10.0, 0.0, -0.5], [-6.0, 12.0, -0.7], [3.0, -20.0, 0.0]];
        let mut points: Vec<Point> = centers
            .iter()
            .flat_map(|&c| cluster(c, 40, &mut rng))
            .collect();
        // ground and a sparse stray that stays below min_points
        points.push(Point::new(5.0, 5.0, -1.7, 0.1));
        points.extend(cluster([30.0, 30.0, 0.0], 3, &mut rng));
        let scene = Scene::new(points, vec![], DomainTag::TargetUnlabeled);
        let oracle = ClusterOracle::default();
        let (labeled, stats) = generate_pseudo_labels(&oracle, &[scene], 0.3).unwrap();
        assert_eq!(stats.kept, 3);
        let boxes = &labeled[0].boxes;
        assert_eq!(boxes.len(), 3);
        for c in centers {
            assert!(boxes.iter().any(|b| b.contains(c)), "{c:?}");
        }
        assert!(labeled[0].pseudo_labeled);
        assert_eq!(labeled[0].domain, DomainTag::TargetUnlabeled);
    }

    #[test]
    fn threshold_extremes() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mut points = cluster([10.0, 0.0, 0.0], 60, &mut rng);
        points.extend(cluster([-10.0, 0.0, 0.0], 10, &mut rng));
        let scene = Scene::new(points, vec![], DomainTag::TargetUnlabeled);
        let oracle = ClusterOracle::default();
        let (all, s0) = generate_pseudo_labels(&oracle, std::slice::from_ref(&scene), 0.0).unwrap();
        assert_eq!((all[0].boxes.len(), s0.discarded), (2, 0));
        let (top, s1) = generate_pseudo_labels(&oracle, &[scene], 1.0).unwrap();
        assert_eq!(top[0].boxes.len(), 1);
        assert_eq!(top[0].boxes[0].score, Some(1.0));
        assert_eq!(s1.discarded, 1);
        assert!(generate_pseudo_labels(&oracle, &[], 1.1).is_err());
    }

    #[test]
    fn rigid_gate_only_touches_labeled_target() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let base = Scene::new(
            vec![Point::new(4.0, 1.0, 0.0, 0.5)],
            vec![Box3D::new([4.0, 1.0, 0.0], [1.0, 1.0, 1.0], 0.0, 0)],
            DomainTag::Source,
        );
        for tag in [
            DomainTag::Source,
            DomainTag::TargetUnlabeled,
            DomainTag::Mixed,
        ] {
            let s = base.clone().with_domain(tag);
            let (out, applied) = rigid_augment_gate(&s, &mut rng, true).unwrap();
            assert!(!applied);
            assert_eq!(out, s);
        }
        let tl = base.clone().with_domain(DomainTag::TargetLabeled);
        let (out, applied) = rigid_augment_gate(&tl, &mut rng, true).unwrap();
        assert!(applied);
        assert_ne!(out.points, tl.points);
        assert!(out.boxes[0].contains(out.points[0].xyz()));
        assert!(!rigid_augment_gate(&tl, &mut rng, false).unwrap().1);
    }

    #[test]
    fn derived_streams_are_distinct() {
        let a: u64 = derive_rng(1, Stream::TargetMix, 1, 0).random();
        let b: u64 = derive_rng(1, Stream::TargetMix, 1, 1).random();
        let c: u64 = derive_rng(1, Stream::AdvMix, 1, 0).random();
        let a2: u64 = derive_rng(1, Stream::TargetMix, 1, 0).random();
        assert_eq!(a, a2);
        assert!(a != b && a != c);
    }

    #[test]
    fn config_validation() {
        let ok = PipelineConfig::default();
        ok.validate().unwrap();
        for bad in [
            PipelineConfig {
                p_tm: -0.1,
                ..ok.clone()
            },
            PipelineConfig {
                p_am: 1.1,
                ..ok.clone()
            },
            PipelineConfig {
                lambda: -1.0,
                ..ok.clone()
            },
            PipelineConfig {
                epochs_am: 0,
                ..ok.clone()
            },
            PipelineConfig {
                pseudo_score_threshold: 2.0,
                ..ok.clone()
            },
        ] {
            assert!(bad.validate().is_err());
        }
    }

    #[test]
    fn empty_datasets_rejected() {
        let cfg = PipelineConfig::default();
        let oracle = ClusterOracle::default();
        let tl = vec![Scene::empty(DomainTag::TargetLabeled)];
        let src = vec![Scene::empty(DomainTag::Source)];
        assert!(matches!(
            run_targetmix_stage(&cfg, &[], &tl, &oracle),
            Err(Error::EmptyDataset("source"))
        ));
        assert!(matches!(
            run_targetmix_stage(&cfg, &src, &[], &oracle),
            Err(Error::EmptyDataset("target_labeled"))
        ));
        assert!(matches!(
            run_advmix_stage(&cfg, &[], &[], &oracle, &oracle),
            Err(Error::EmptyDataset(_))
        ));
    }
}
