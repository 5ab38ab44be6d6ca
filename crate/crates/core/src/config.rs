//! Flat `key = value` configuration files.
//!
//! Angles are written in degrees and converted to radians here, nowhere else.
//! Unknown keys, duplicate keys and out-of-range values are rejected.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::pipeline::PipelineConfig;

pub const KEYS: &[&str] = &[
    "source.channels",
    "source.points_per_channel",
    "source.vfov_min_deg",
    "source.vfov_max_deg",
    "target.channels",
    "target.points_per_channel",
    "target.vfov_min_deg",
    "target.vfov_max_deg",
    "p_tm",
    "p_am",
    "lambda",
    "epsilon",
    "rho",
    "mode_weight_translate",
    "mode_weight_add",
    "mode_weight_remove",
    "k_sectors",
    "sector_min_width_deg",
    "sector_max_width_deg",
    "epochs_tm",
    "epochs_am",
    "seed",
    "pseudo_score_threshold",
    "smooth_l1_knee",
    "random_stride_offset",
    "rigid_augment",
];

fn parse_value<T: std::str::FromStr>(line: usize, key: &str, raw: &str) -> Result<T> {
    raw.parse().map_err(|_| Error::Config {
        line,
        reason: format!("cannot parse {key} = {raw:?}"),
    })
}

fn parse_bool(line: usize, key: &str, raw: &str) -> Result<bool> {
    match raw {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Config {
            line,
            reason: format!("{key} expects true/false, got {raw:?}"),
        }),
    }
}

/// Applies every `key = value` line of `text` on top of the defaults.
pub fn parse_config(text: &str) -> Result<PipelineConfig> {
    let mut cfg = PipelineConfig::default();
    let mut seen = HashSet::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let body = raw.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let Some((key, value)) = body.split_once('=') else {
            return Err(Error::Config {
                line,
                reason: format!("expected key = value, got {body:?}"),
            });
        };
        let (key, value) = (key.trim(), value.trim());
        if !KEYS.contains(&key) {
            return Err(Error::Config {
                line,
                reason: format!("unknown key {key:?}"),
            });
        }
        if !seen.insert(key.to_string()) {
            return Err(Error::Config {
                line,
                reason: format!("duplicate key {key:?}"),
            });
        }
        let f = || parse_value::<f64>(line, key, value);
        let deg = || f().map(f64::to_radians);
        let n = || parse_value::<usize>(line, key, value);
        match key {
            "source.channels" => cfg.source_sensor.channels = n()?,
            "source.points_per_channel" => cfg.source_sensor.points_per_channel = n()?,
            "source.vfov_min_deg" => cfg.source_sensor.vfov_min = deg()?,
            "source.vfov_max_deg" => cfg.source_sensor.vfov_max = deg()?,
            "target.channels" => cfg.target_sensor.channels = n()?,
            "target.points_per_channel" => cfg.target_sensor.points_per_channel = n()?,
            "target.vfov_min_deg" => cfg.target_sensor.vfov_min = deg()?,
            "target.vfov_max_deg" => cfg.target_sensor.vfov_max = deg()?,
            "p_tm" => cfg.p_tm = f()?,
            "p_am" => cfg.p_am = f()?,
            "lambda" => cfg.lambda = f()?,
            "epsilon" => cfg.perturbation.epsilon = f()?,
            "rho" => cfg.perturbation.rho = f()?,
            "mode_weight_translate" => cfg.perturbation.mode_weights[0] = f()?,
            "mode_weight_add" => cfg.perturbation.mode_weights[1] = f()?,
            "mode_weight_remove" => cfg.perturbation.mode_weights[2] = f()?,
            "k_sectors" => cfg.mask.k = n()?,
            "sector_min_width_deg" => cfg.mask.min_width = deg()?,
            "sector_max_width_deg" => cfg.mask.max_width = deg()?,
            "epochs_tm" => cfg.epochs_tm = n()?,
            "epochs_am" => cfg.epochs_am = n()?,
            "seed" => cfg.seed = parse_value(line, key, value)?,
            "pseudo_score_threshold" => cfg.pseudo_score_threshold = f()?,
            "smooth_l1_knee" => cfg.smooth_l1_knee = f()?,
            "random_stride_offset" => cfg.random_stride_offset = parse_bool(line, key, value)?,
            "rigid_augment" => cfg.rigid_augment = parse_bool(line, key, value)?,
            _ => unreachable!("key list and match arms diverged"),
        }
    }
    cfg.validate().map_err(|e| Error::Config {
        line: 0,
        reason: e.to_string(),
    })?;
    Ok(cfg)
}

/// Renders every key. Parsing the output reproduces `cfg` up to the
/// degree/radian round trip.
pub fn format_config(cfg: &PipelineConfig) -> String {
    let mut out = String::new();
    let mut kv = |k: &str, v: String| writeln!(out, "{k} = {v}").unwrap();
    for (prefix, s) in [
        ("source", &cfg.source_sensor),
        ("target", &cfg.target_sensor),
    ] {
        kv(&format!("{prefix}.channels"), s.channels.to_string());
        kv(
            &format!("{prefix}.points_per_channel"),
            s.points_per_channel.to_string(),
        );
        kv(
            &format!("{prefix}.vfov_min_deg"),
            s.vfov_min.to_degrees().to_string(),
        );
        kv(
            &format!("{prefix}.vfov_max_deg"),
            s.vfov_max.to_degrees().to_string(),
        );
    }
    kv("p_tm", cfg.p_tm.to_string());
    kv("p_am", cfg.p_am.to_string());
    kv("lambda", cfg.lambda.to_string());
    kv("epsilon", cfg.perturbation.epsilon.to_string());
    kv("rho", cfg.perturbation.rho.to_string());
    kv(
        "mode_weight_translate",
        cfg.perturbation.mode_weights[0].to_string(),
    );
    kv(
        "mode_weight_add",
        cfg.perturbation.mode_weights[1].to_string(),
    );
    kv(
        "mode_weight_remove",
        cfg.perturbation.mode_weights[2].to_string(),
    );
    kv("k_sectors", cfg.mask.k.to_string());
    kv(
        "sector_min_width_deg",
        cfg.mask.min_width.to_degrees().to_string(),
    );
    kv(
        "sector_max_width_deg",
        cfg.mask.max_width.to_degrees().to_string(),
    );
    kv("epochs_tm", cfg.epochs_tm.to_string());
    kv("epochs_am", cfg.epochs_am.to_string());
    kv("seed", cfg.seed.to_string());
    kv(
        "pseudo_score_threshold",
        cfg.pseudo_score_threshold.to_string(),
    );
    kv("smooth_l1_knee", cfg.smooth_l1_knee.to_string());
    kv("random_stride_offset", cfg.random_stride_offset.to_string());
    kv("rigid_augment", cfg.rigid_augment.to_string());
    out
}

pub fn load_config(path: impl AsRef<Path>) -> Result<PipelineConfig> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config(&text)
}
