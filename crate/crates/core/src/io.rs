//! Point cloud and label files.
//!
//! Clouds are headerless little-endian `f32` quadruples `(x, y, z, intensity)`.
//! Labels are text, one box per line: `cx cy cz w l h yaw class_id [score]`,
//! with `#` starting a comment.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::config::{format_config, load_config};
use crate::error::{Error, Result};
use crate::geom::{Box3D, DomainTag, Point, Scene};
use crate::pipeline::{Datasets, PipelineConfig};

const RECORD_BYTES: usize = 16;

pub fn decode_cloud(bytes: &[u8], path: &Path) -> Result<Vec<Point>> {
    if bytes.len() % RECORD_BYTES != 0 {
        return Err(Error::TruncatedFile {
            path: path.to_path_buf(),
            len: bytes.len() as u64,
        });
    }
    bytes
        .chunks_exact(RECORD_BYTES)
        .enumerate()
        .map(|(index, rec)| {
            let f = |k: usize| f32::from_le_bytes(rec[4 * k..4 * k + 4].try_into().unwrap());
            let vals = [f(0), f(1), f(2), f(3)];
            if vals.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteValue {
                    path: path.to_path_buf(),
                    index,
                });
            }
            Ok(Point::new(
                vals[0] as f64,
                vals[1] as f64,
                vals[2] as f64,
                vals[3] as f64,
            ))
        })
        .collect()
}

pub fn encode_cloud(points: &[Point]) -> Vec<u8> {
    let mut out = Vec::with_capacity(points.len() * RECORD_BYTES);
    for p in points {
        for v in [p.x, p.y, p.z, p.intensity] {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

pub fn read_cloud(path: impl AsRef<Path>) -> Result<Vec<Point>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_cloud(&bytes, path)
}

/// Writes points as `f32`; values are rounded to single precision.
pub fn write_cloud(points: &[Point], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_cloud(points)).map_err(|e| Error::io(path, e))
}

/// `%.9g`-style formatting: nine significant digits, shortest layout.
pub fn format_sig9(v: f64) -> String {
    if v == 0.0 || !v.is_finite() {
        return format!("{}", if v == 0.0 { 0.0 } else { v });
    }
    let exp = v.abs().log10().floor() as i32;
    if (-5..9).contains(&exp) {
        let decimals = (8 - exp).max(0) as usize;
        let s = format!("{v:.decimals$}");
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s
        }
    } else {
        format!("{v:.8e}")
    }
}

pub fn parse_labels(text: &str, path: &Path) -> Result<Vec<Box3D>> {
    let mut boxes = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let malformed = |reason: String| Error::MalformedRecord {
            path: path.to_path_buf(),
            line: line_no,
            reason,
        };
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 8 && fields.len() != 9 {
            return Err(malformed(format!(
                "expected 8 or 9 fields, found {}",
                fields.len()
            )));
        }
        let mut nums = [0.0f64; 7];
        for (k, f) in fields[..7].iter().enumerate() {
            nums[k] = f
                .parse::<f64>()
                .map_err(|_| malformed(format!("field {} is not a number: {f:?}", k + 1)))?;
        }
        let class_id = fields[7]
            .parse::<i32>()
            .map_err(|_| malformed(format!("class id is not an integer: {:?}", fields[7])))?;
        let mut b = Box3D::try_new(
            [nums[0], nums[1], nums[2]],
            [nums[3], nums[4], nums[5]],
            nums[6],
            class_id,
        )
        .map_err(|e| malformed(e.to_string()))?;
        if let Some(s) = fields.get(8) {
            let score = s
                .parse::<f64>()
                .map_err(|_| malformed(format!("score is not a number: {s:?}")))?;
            if !(0.0..=1.0).contains(&score) {
                return Err(malformed(format!("score {score} outside [0, 1]")));
            }
            b.score = Some(score);
        }
        boxes.push(b);
    }
    Ok(boxes)
}

pub fn format_labels(boxes: &[Box3D]) -> String {
    let mut out = String::new();
    for b in boxes {
        let fields = [b.cx, b.cy, b.cz, b.w, b.l, b.h, b.yaw].map(format_sig9);
        write!(out, "{} {}", fields.join(" "), b.class_id).unwrap();
        if let Some(s) = b.score {
            write!(out, " {}", format_sig9(s)).unwrap();
        }
        out.push('\n');
    }
    out
}

pub fn read_labels(path: impl AsRef<Path>) -> Result<Vec<Box3D>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_labels(&text, path)
}

pub fn write_labels(boxes: &[Box3D], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, format_labels(boxes)).map_err(|e| Error::io(path, e))
}

pub const SOURCE_DIR: &str = "source";
pub const TARGET_LABELED_DIR: &str = "target_labeled";
pub const TARGET_UNLABELED_DIR: &str = "target_unlabeled";
pub const CONFIG_FILE: &str = "config.txt";

fn sorted_clouds(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut paths = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().is_some_and(|x| x == "bin") {
            paths.push(path);
        }
    }
    paths.sort();
    Ok(paths)
}

fn read_role(dir: &Path, domain: DomainTag, labels: LabelPolicy) -> Result<Vec<Scene>> {
    sorted_clouds(dir)?
        .into_iter()
        .map(|cloud| {
            let points = read_cloud(&cloud)?;
            let label_path = cloud.with_extension("txt");
            let boxes = match labels {
                LabelPolicy::Required => read_labels(&label_path)?,
                LabelPolicy::Optional if label_path.exists() => read_labels(&label_path)?,
                _ => Vec::new(),
            };
            Ok(Scene::new(points, boxes, domain))
        })
        .collect()
}

#[derive(Clone, Copy)]
enum LabelPolicy {
    Required,
    Optional,
    Ignored,
}

/// Loads a manifest directory. `config.txt` is returned when present.
pub fn read_manifest(dir: impl AsRef<Path>) -> Result<(Datasets, Option<PipelineConfig>)> {
    let dir = dir.as_ref();
    let data = Datasets {
        source: read_role(
            &dir.join(SOURCE_DIR),
            DomainTag::Source,
            LabelPolicy::Optional,
        )?,
        target_labeled: read_role(
            &dir.join(TARGET_LABELED_DIR),
            DomainTag::TargetLabeled,
            LabelPolicy::Required,
        )?,
        target_unlabeled: read_role(
            &dir.join(TARGET_UNLABELED_DIR),
            DomainTag::TargetUnlabeled,
            LabelPolicy::Ignored,
        )?,
    };
    let cfg_path = dir.join(CONFIG_FILE);
    let cfg = if cfg_path.exists() {
        Some(load_config(&cfg_path)?)
    } else {
        None
    };
    Ok((data, cfg))
}

/// Writes `data` and `cfg` in manifest layout. Unlabeled scenes get no
/// label files; the other roles always do.
pub fn write_manifest(dir: impl AsRef<Path>, data: &Datasets, cfg: &PipelineConfig) -> Result<()> {
    let dir = dir.as_ref();
    let roles = [
        (SOURCE_DIR, &data.source, true),
        (TARGET_LABELED_DIR, &data.target_labeled, true),
        (TARGET_UNLABELED_DIR, &data.target_unlabeled, false),
    ];
    for (name, scenes, with_labels) in roles {
        let sub = dir.join(name);
        fs::create_dir_all(&sub).map_err(|e| Error::io(&sub, e))?;
        for (i, scene) in scenes.iter().enumerate() {
            let stem = sub.join(format!("{i:06}"));
            write_cloud(&scene.points, stem.with_extension("bin"))?;
            if with_labels {
                write_labels(&scene.boxes, stem.with_extension("txt"))?;
            }
        }
    }
    let cfg_path = dir.join(CONFIG_FILE);
    fs::write(&cfg_path, format_config(cfg)).map_err(|e| Error::io(&cfg_path, e))
}
