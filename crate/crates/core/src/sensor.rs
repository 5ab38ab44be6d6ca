//! LiDAR distribution matching.
//!
//! A source scan is binned into a range image laid out on the source sensor's
//! beam grid, strided down so its beam count, points per channel and
//! effective vertical field of view resemble the target sensor, then
//! projected back to Cartesian points.

use std::f64::consts::TAU;

use rand::Rng;

use crate::error::{Error, Result};
use crate::geom::{cart_to_spherical, spherical_to_cart, DomainTag, Scene, SphericalCoord};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensorSpec {
    pub channels: usize,
    pub points_per_channel: usize,
    /// Radians.
    pub vfov_min: f64,
    /// Radians.
    pub vfov_max: f64,
}

impl SensorSpec {
    pub fn new(
        channels: usize,
        points_per_channel: usize,
        vfov_min: f64,
        vfov_max: f64,
    ) -> Result<Self> {
        let spec = Self {
            channels,
            points_per_channel,
            vfov_min,
            vfov_max,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn from_degrees(
        channels: usize,
        points_per_channel: usize,
        vfov_min_deg: f64,
        vfov_max_deg: f64,
    ) -> Result<Self> {
        Self::new(
            channels,
            points_per_channel,
            vfov_min_deg.to_radians(),
            vfov_max_deg.to_radians(),
        )
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 || self.points_per_channel == 0 {
            return Err(Error::InvalidSensorSpec(
                "channels and points_per_channel must be at least 1".into(),
            ));
        }
        if !(self.vfov_min.is_finite() && self.vfov_max.is_finite())
            || self.vfov_min >= self.vfov_max
        {
            return Err(Error::InvalidSensorSpec(format!(
                "vfov_min ({}) must be below vfov_max ({})",
                self.vfov_min, self.vfov_max
            )));
        }
        Ok(())
    }

    /// 64 beams, ~2200 points per beam, VFOV [−17.6°, 2.4°].
    pub fn waymo() -> Self {
        Self::from_degrees(64, 2200, -17.6, 2.4).unwrap()
    }

    /// 32 beams, 1100 points per beam, VFOV [−30°, 10°].
    pub fn nuscenes() -> Self {
        Self::from_degrees(32, 1100, -30.0, 10.0).unwrap()
    }

    /// 64 beams, VFOV [−23.6°, 3.2°].
    pub fn kitti() -> Self {
        Self::from_degrees(64, 2048, -23.6, 3.2).unwrap()
    }

    pub fn vfov_span(&self) -> f64 {
        self.vfov_max - self.vfov_min
    }

    pub fn row_pitch(&self) -> f64 {
        self.vfov_span() / self.channels as f64
    }

    pub fn col_pitch(&self) -> f64 {
        TAU / self.points_per_channel as f64
    }

    /// Center elevation of beam `row` (row 0 is the lowest beam).
    pub fn row_center(&self, row: usize) -> f64 {
        self.vfov_min + (row as f64 + 0.5) * self.row_pitch()
    }

    pub fn col_center(&self, col: usize) -> f64 {
        (col as f64 + 0.5) * self.col_pitch()
    }

    /// Grid cell for a direction, or `None` when the elevation falls outside
    /// the field of view.
    pub fn cell_of(&self, azimuth: f64, elevation: f64) -> Option<(usize, usize)> {
        let t = (elevation - self.vfov_min) / self.vfov_span();
        if !(0.0..=1.0).contains(&t) {
            return None;
        }
        let row = ((t * self.channels as f64) as usize).min(self.channels - 1);
        let col = ((azimuth / TAU * self.points_per_channel as f64) as usize)
            .min(self.points_per_channel - 1);
        Some((row, col))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RangeCell {
    pub range: f64,
    pub intensity: f64,
}

/// Row-major grid of returns on a sensor's beam lattice.
///
/// A freshly built image covers the full lattice of `spec`. Downsampling keeps
/// every `row_stride`-th row starting at `row_offset` (likewise for columns),
/// so image row `r` sits on lattice row `row_offset + r * row_stride`.
#[derive(Debug, Clone, PartialEq)]
pub struct RangeImage {
    height: usize,
    width: usize,
    cells: Vec<Option<RangeCell>>,
    spec: SensorSpec,
    row_stride: usize,
    col_stride: usize,
    row_offset: usize,
    col_offset: usize,
}

impl RangeImage {
    pub fn empty(spec: SensorSpec) -> Self {
        Self {
            height: spec.channels,
            width: spec.points_per_channel,
            cells: vec![None; spec.channels * spec.points_per_channel],
            spec,
            row_stride: 1,
            col_stride: 1,
            row_offset: 0,
            col_offset: 0,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn spec(&self) -> &SensorSpec {
        &self.spec
    }

    pub fn get(&self, row: usize, col: usize) -> Option<RangeCell> {
        self.cells[row * self.width + col]
    }

    /// Writes a return, keeping the nearer one on collision.
    pub fn insert(&mut self, row: usize, col: usize, cell: RangeCell) -> bool {
        let slot = &mut self.cells[row * self.width + col];
        match slot {
            Some(existing) if existing.range <= cell.range => false,
            _ => {
                *slot = Some(cell);
                true
            }
        }
    }

    pub fn occupancy(&self) -> usize {
        self.cells.iter().filter(|c| c.is_some()).count()
    }

    pub fn lattice_row(&self, row: usize) -> usize {
        self.row_offset + row * self.row_stride
    }

    pub fn lattice_col(&self, col: usize) -> usize {
        self.col_offset + col * self.col_stride
    }

    /// Direction of the center of image cell `(row, col)`.
    pub fn cell_direction(&self, row: usize, col: usize) -> (f64, f64) {
        (
            self.spec.col_center(self.lattice_col(col)),
            self.spec.row_center(self.lattice_row(row)),
        )
    }
}

/// Bins scene points onto the beam lattice of `spec`. Out-of-VFOV points and
/// points at the sensor origin are dropped; colliding returns keep the nearest.
pub fn build_range_image(scene: &Scene, spec: &SensorSpec) -> RangeImage {
    let mut img = RangeImage::empty(*spec);
    for p in &scene.points {
        let Ok(s) = cart_to_spherical(p) else {
            continue;
        };
        if let Some((row, col)) = spec.cell_of(s.azimuth, s.elevation) {
            img.insert(
                row,
                col,
                RangeCell {
                    range: s.range,
                    intensity: p.intensity,
                },
            );
        }
    }
    img
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DownsampleFactors {
    pub vertical: usize,
    pub horizontal: usize,
    pub raw_vertical: f64,
    pub raw_horizontal: f64,
}

impl DownsampleFactors {
    /// The target sensor is denser than the source along some axis; the
    /// corresponding factor was floored at 1.
    pub fn upsample_required(&self) -> bool {
        self.raw_vertical < 1.0 || self.raw_horizontal < 1.0
    }
}

/// Integer strides that take the `src` lattice to the `tgt` density.
///
/// Vertically the stride combines the VFOV span ratio with the channel ratio:
/// a target spreading half as many beams over twice the span is four times
/// sparser per degree.
pub fn downsample_factors(src: &SensorSpec, tgt: &SensorSpec) -> Result<DownsampleFactors> {
    src.validate()?;
    tgt.validate()?;
    let raw_vertical =
        (tgt.vfov_span() / src.vfov_span()) * (src.channels as f64 / tgt.channels as f64);
    let raw_horizontal = src.points_per_channel as f64 / tgt.points_per_channel as f64;
    let to_factor = |raw: f64| (raw.round() as usize).max(1);
    Ok(DownsampleFactors {
        vertical: to_factor(raw_vertical),
        horizontal: to_factor(raw_horizontal),
        raw_vertical,
        raw_horizontal,
    })
}

/// Keeps rows `≡ 0 (mod v)` and columns `≡ 0 (mod h)`.
pub fn downsample_range_image(img: &RangeImage, v: usize, h: usize) -> Result<RangeImage> {
    downsample_range_image_with_offset(img, v, h, 0, 0)
}

/// Keeps rows `≡ row_offset (mod v)` and columns `≡ col_offset (mod h)`.
pub fn downsample_range_image_with_offset(
    img: &RangeImage,
    v: usize,
    h: usize,
    row_offset: usize,
    col_offset: usize,
) -> Result<RangeImage> {
    if v == 0 || h == 0 {
        return Err(Error::InvalidParameter(format!(
            "downsample factors must be at least 1, got ({v}, {h})"
        )));
    }
    if row_offset >= v || col_offset >= h {
        return Err(Error::InvalidParameter(format!(
            "stride offsets ({row_offset}, {col_offset}) must be below the factors ({v}, {h})"
        )));
    }
    let height = img.height.saturating_sub(row_offset).div_ceil(v);
    let width = img.width.saturating_sub(col_offset).div_ceil(h);
    let mut cells = Vec::with_capacity(height * width);
    for r in 0..height {
        let src_r = row_offset + r * v;
        for c in 0..width {
            cells.push(img.get(src_r, col_offset + c * h));
        }
    }
    Ok(RangeImage {
        height,
        width,
        cells,
        spec: img.spec,
        row_stride: img.row_stride * v,
        col_stride: img.col_stride * h,
        row_offset: img.row_offset + img.row_stride * row_offset,
        col_offset: img.col_offset + img.col_stride * col_offset,
    })
}

/// One point per occupied cell, placed at the cell-center direction with the
/// stored range. Boxes are the caller's business.
pub fn backproject(img: &RangeImage) -> Scene {
    let mut points = Vec::with_capacity(img.occupancy());
    for r in 0..img.height {
        for c in 0..img.width {
            if let Some(cell) = img.get(r, c) {
                let (azimuth, elevation) = img.cell_direction(r, c);
                points.push(spherical_to_cart(
                    &SphericalCoord {
                        azimuth,
                        elevation,
                        range: cell.range,
                    },
                    cell.intensity,
                ));
            }
        }
    }
    Scene::new(points, Vec::new(), DomainTag::Source)
}

fn match_with_offsets(
    scene: &Scene,
    src: &SensorSpec,
    factors: DownsampleFactors,
    offsets: (usize, usize),
) -> Result<Scene> {
    let img = build_range_image(scene, src);
    let down = downsample_range_image_with_offset(
        &img,
        factors.vertical,
        factors.horizontal,
        offsets.0,
        offsets.1,
    )?;
    let mut out = backproject(&down);
    out.boxes = scene.boxes.clone();
    out.domain = DomainTag::Source;
    Ok(out)
}

fn checked_factors(scene: &Scene, src: &SensorSpec, tgt: &SensorSpec) -> Result<DownsampleFactors> {
    scene.expect_domain(DomainTag::Source)?;
    let factors = downsample_factors(src, tgt)?;
    if factors.upsample_required() {
        log::warn!(
            "target sensor is denser than source (raw factors {:.3}, {:.3}); flooring at 1",
            factors.raw_vertical,
            factors.raw_horizontal
        );
    }
    Ok(factors)
}

/// Resamples a source scene onto the target sensor's density using stride
/// offsets of zero. Labels are copied verbatim, even for boxes left empty.
pub fn lidar_distribution_match(
    scene: &Scene,
    src: &SensorSpec,
    tgt: &SensorSpec,
) -> Result<Scene> {
    let factors = checked_factors(scene, src, tgt)?;
    match_with_offsets(scene, src, factors, (0, 0))
}

/// Same as [`lidar_distribution_match`] but draws the row and column stride
/// offsets uniformly per call.
pub fn lidar_distribution_match_random_offset<R: Rng + ?Sized>(
    scene: &Scene,
    src: &SensorSpec,
    tgt: &SensorSpec,
    rng: &mut R,
) -> Result<Scene> {
    let factors = checked_factors(scene, src, tgt)?;
    let offsets = (
        rng.random_range(0..factors.vertical),
        rng.random_range(0..factors.horizontal),
    );
    match_with_offsets(scene, src, factors, offsets)
}
