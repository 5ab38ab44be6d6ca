//! Polar sector mixing of a matched source scene with a labeled target scene.
//!
//! A [`SectorMask`] hands K disjoint azimuth sectors to the target scene and
//! the complement to the source scene. Boxes cut by any sector boundary are
//! removed together with their interior points before the halves are joined.

use std::f64::consts::{PI, TAU};

use rand::Rng;

use crate::error::{Error, Result};
use crate::geom::{azimuth_of, wrap_angle, Box3D, DomainTag, Scene, AXIS_EPS};

pub const MAX_PACKING_ATTEMPTS: usize = 1000;

/// Half-open azimuth interval `[start, start + width)`, possibly wrapping.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sector {
    pub start: f64,
    pub width: f64,
}

impl Sector {
    pub fn contains(&self, azimuth: f64) -> bool {
        (azimuth - self.start).rem_euclid(TAU) < self.width
    }

    pub fn end(&self) -> f64 {
        wrap_angle(self.start + self.width)
    }

    fn disjoint(&self, other: &Sector) -> bool {
        !self.contains(other.start) && !other.contains(self.start)
    }
}

/// Target-owned sectors; everything outside them belongs to the source.
#[derive(Debug, Clone, PartialEq)]
pub struct SectorMask {
    sectors: Vec<Sector>,
}

impl SectorMask {
    pub fn new(mut sectors: Vec<Sector>) -> Result<Self> {
        if sectors.is_empty() {
            return Err(Error::InvalidParameter(
                "a mask needs at least one sector".into(),
            ));
        }
        for s in &sectors {
            if !(s.start.is_finite() && (0.0..TAU).contains(&s.start)) {
                return Err(Error::InvalidParameter(format!(
                    "sector start {} outside [0, 2π)",
                    s.start
                )));
            }
            if !(s.width > 0.0 && s.width < TAU) {
                return Err(Error::InvalidParameter(format!(
                    "sector width {} outside (0, 2π)",
                    s.width
                )));
            }
        }
        let total: f64 = sectors.iter().map(|s| s.width).sum();
        if total >= TAU {
            return Err(Error::InvalidParameter(format!(
                "sector widths sum to {total}, must stay below 2π"
            )));
        }
        for (i, a) in sectors.iter().enumerate() {
            if sectors[i + 1..].iter().any(|b| !a.disjoint(b)) {
                return Err(Error::InvalidParameter("sectors overlap".into()));
            }
        }
        sectors.sort_by(|a, b| a.start.total_cmp(&b.start));
        Ok(Self { sectors })
    }

    pub fn sectors(&self) -> &[Sector] {
        &self.sectors
    }

    /// True when `azimuth` is target-owned.
    pub fn contains(&self, azimuth: f64) -> bool {
        self.sectors.iter().any(|s| s.contains(azimuth))
    }

    /// Every sector start and end angle.
    pub fn boundaries(&self) -> impl Iterator<Item = f64> + '_ {
        self.sectors.iter().flat_map(|s| [s.start, s.end()])
    }
}

/// Sector count and width bounds for random masks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaskParams {
    pub k: usize,
    pub min_width: f64,
    pub max_width: f64,
}

impl Default for MaskParams {
    fn default() -> Self {
        Self {
            k: 2,
            min_width: PI / 6.0,
            max_width: PI / 2.0,
        }
    }
}

impl MaskParams {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::InvalidParameter(
                "k_sectors must be at least 1".into(),
            ));
        }
        if !(self.min_width > 0.0 && self.min_width <= self.max_width && self.max_width < TAU) {
            return Err(Error::InvalidParameter(format!(
                "sector widths need 0 < min ({}) <= max ({}) < 2π",
                self.min_width, self.max_width
            )));
        }
        Ok(())
    }
}

/// Draws `k` disjoint sectors with widths uniform in `[min_width, max_width]`
/// and uniform starts, rejecting whole configurations that overlap.
pub fn sample_sectors<R: Rng + ?Sized>(
    rng: &mut R,
    k: usize,
    min_width: f64,
    max_width: f64,
) -> Result<SectorMask> {
    MaskParams {
        k,
        min_width,
        max_width,
    }
    .validate()?;
    let fail = Error::SectorPackingFailed {
        k,
        attempts: MAX_PACKING_ATTEMPTS,
    };
    if k as f64 * min_width >= TAU {
        return Err(fail);
    }
    for _ in 0..MAX_PACKING_ATTEMPTS {
        let sectors: Vec<Sector> = (0..k)
            .map(|_| {
                let width = if min_width == max_width {
                    min_width
                } else {
                    rng.random_range(min_width..=max_width)
                };
                Sector {
                    start: rng.random_range(0.0..TAU),
                    width,
                }
            })
            .collect();
        if sectors.iter().map(|s| s.width).sum::<f64>() >= TAU {
            continue;
        }
        let overlap = sectors
            .iter()
            .enumerate()
            .any(|(i, a)| sectors[i + 1..].iter().any(|b| !a.disjoint(b)));
        if !overlap {
            return SectorMask::new(sectors);
        }
    }
    Err(fail)
}

pub fn sample_mask<R: Rng + ?Sized>(rng: &mut R, params: &MaskParams) -> Result<SectorMask> {
    sample_sectors(rng, params.k, params.min_width, params.max_width)
}

/// Shortest arc covering a set of azimuths, as `(start, length)`.
fn covering_arc(angles: &mut [f64]) -> (f64, f64) {
    angles.sort_by(f64::total_cmp);
    let n = angles.len();
    let (mut gap, mut after) = (angles[0] + TAU - angles[n - 1], 0);
    for i in 1..n {
        let g = angles[i] - angles[i - 1];
        if g > gap {
            gap = g;
            after = i;
        }
    }
    (angles[after], TAU - gap)
}

fn footprint_contains_origin(b: &Box3D) -> bool {
    let [x, y, _] = b.to_box_frame([0.0, 0.0, b.cz]);
    x.abs() <= 0.5 * b.l && y.abs() <= 0.5 * b.w
}

/// Whether any sector boundary falls inside the azimuth arc spanned by the
/// box corners (boundary-inclusive). A box whose footprint surrounds the
/// sensor spans every azimuth and always crosses.
pub fn box_crosses_boundary(b: &Box3D, mask: &SectorMask) -> Result<bool> {
    if b.cx.hypot(b.cy) < AXIS_EPS {
        return Err(Error::DegenerateAzimuth);
    }
    if footprint_contains_origin(b) {
        return Ok(true);
    }
    let mut azimuths = b.footprint_corners().map(|[x, y]| azimuth_of(x, y));
    let (start, len) = covering_arc(&mut azimuths);
    Ok(mask
        .boundaries()
        .any(|bd| (bd - start).rem_euclid(TAU) <= len))
}

/// Enhanced Mix filtering for one side of the mask.
///
/// Drops every boundary-crossing box along with the points inside it, then
/// keeps points (and box centers) on the requested side: inside the sectors
/// when `keep_inside`, outside otherwise. Boxes centred on the z-axis are
/// treated as crossing.
pub fn enhanced_filter(scene: &Scene, mask: &SectorMask, keep_inside: bool) -> Scene {
    let (crossing, intact): (Vec<&Box3D>, Vec<&Box3D>) = scene
        .boxes
        .iter()
        .partition(|b| box_crosses_boundary(b, mask).unwrap_or(true));

    let points = scene
        .points
        .iter()
        .filter(|p| {
            let xyz = p.xyz();
            mask.contains(p.azimuth()) == keep_inside && !crossing.iter().any(|b| b.contains(xyz))
        })
        .copied()
        .collect();
    let boxes = intact
        .into_iter()
        .filter(|b| mask.contains(azimuth_of(b.cx, b.cy)) == keep_inside)
        .copied()
        .collect();
    Scene {
        points,
        boxes,
        domain: scene.domain,
        pseudo_labeled: scene.pseudo_labeled,
    }
}

/// Source outside the sectors, target inside; source elements first.
pub fn polar_mix(source: &Scene, target: &Scene, mask: &SectorMask) -> Scene {
    let mut out = enhanced_filter(source, mask, false);
    let inside = enhanced_filter(target, mask, true);
    out.points.extend(inside.points);
    out.boxes.extend(inside.boxes);
    out.domain = DomainTag::Mixed;
    out.pseudo_labeled = false;
    out
}

/// With probability `p_tm` mixes under a freshly sampled mask, otherwise
/// returns the source scene unchanged.
pub fn targetmix_sample<R: Rng + ?Sized>(
    rng: &mut R,
    p_tm: f64,
    source: &Scene,
    target: &Scene,
    params: &MaskParams,
) -> Result<Scene> {
    if !(0.0..=1.0).contains(&p_tm) {
        return Err(Error::InvalidParameter(format!(
            "p_tm {p_tm} outside [0, 1]"
        )));
    }
    if rng.random::<f64>() < p_tm {
        let mask = sample_mask(rng, params)?;
        Ok(polar_mix(source, target, &mask))
    } else {
        Ok(source.clone())
    }
}
