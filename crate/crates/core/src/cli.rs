//! Command-line front end.
//!
//! Exit codes: 0 on success, 1 on invalid input or configuration, 2 on
//! filesystem errors. Diagnostics go to stderr.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::adv::adversarial_perturb;
use crate::config::load_config;
use crate::error::{Error, Result};
use crate::geom::{Box3D, DomainTag, Scene};
use crate::gradcheck::{run_gradcheck, DEFAULT_STEP};
use crate::io::{
    read_cloud, read_labels, read_manifest, write_cloud, write_labels, write_manifest,
};
use crate::mix::{polar_mix, sample_mask};
use crate::pipeline::{generate_pseudo_labels, run_full, PipelineConfig, StageReport};
use crate::sensor::{
    downsample_factors, lidar_distribution_match, lidar_distribution_match_random_offset,
};
use crate::synth::{synthesize_dataset, DatasetSizes, NoiseParams};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 1;
pub const EXIT_IO: i32 = 2;

pub const PIPELINE_LOG: &str = "pipeline.log";
pub const PIPELINE_SUMMARY: &str = "summary.json";

#[derive(Debug, Parser)]
#[command(
    name = "domaug",
    version,
    about = "LiDAR cross-sensor domain augmentation"
)]
struct Cli {
    /// Configuration file (`key = value` lines).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Resample a source-sensor cloud to the target sensor's beam density.
    Match {
        input: PathBuf,
        #[arg(long)]
        labels: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Mix a matched source scene with a labeled target scene.
    Mix {
        source: PathBuf,
        target: PathBuf,
        #[arg(long)]
        source_labels: Option<PathBuf>,
        #[arg(long)]
        target_labels: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Adversarially perturb points inside pseudo-label boxes.
    Adv {
        input: PathBuf,
        /// Pseudo labels; predicted by the reference detector when omitted.
        #[arg(long)]
        labels: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run both stages over a manifest directory.
    Pipeline {
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a synthetic manifest directory.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = DatasetSizes::default().source)]
        source: usize,
        #[arg(long, default_value_t = DatasetSizes::default().target_labeled)]
        target_labeled: usize,
        #[arg(long, default_value_t = DatasetSizes::default().target_unlabeled)]
        target_unlabeled: usize,
    },
    /// Compare the surrogate gradient with central finite differences.
    Gradcheck {
        #[arg(long, default_value_t = 50)]
        fixtures: usize,
        #[arg(long, default_value_t = DEFAULT_STEP)]
        step: f64,
        /// Exit with status 1 when the error reaches this value.
        #[arg(long, default_value_t = 1e-5)]
        tolerance: f64,
    },
}

/// Parses `argv` (program name first), runs the subcommand and returns the
/// process exit code.
pub fn cli_dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() {
                EXIT_INVALID
            } else {
                EXIT_OK
            };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_io() {
                EXIT_IO
            } else {
                EXIT_INVALID
            }
        }
    }
}

fn base_config(
    path: Option<&Path>,
    seed: Option<u64>,
    fallback: Option<PipelineConfig>,
) -> Result<PipelineConfig> {
    let mut cfg = match path {
        Some(p) => load_config(p)?,
        None => fallback.unwrap_or_default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn load_scene(cloud: &Path, labels: Option<&Path>, domain: DomainTag) -> Result<Scene> {
    let points = read_cloud(cloud)?;
    let boxes = labels.map(read_labels).transpose()?.unwrap_or_default();
    Ok(Scene::new(points, boxes, domain))
}

fn save_scene(scene: &Scene, out: &Path, with_labels: bool) -> Result<()> {
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    write_cloud(&scene.points, out)?;
    if with_labels {
        write_labels(&scene.boxes, out.with_extension("txt"))?;
    }
    Ok(())
}

#[derive(Serialize)]
struct Summary<'a> {
    seed: u64,
    targetmix: &'a StageReport,
    advmix: &'a StageReport,
}

fn run(cli: Cli) -> Result<i32> {
    let config = cli.config.as_deref();
    match cli.command {
        Command::Match { input, labels, out } => {
            let cfg = base_config(config, cli.seed, None)?;
            let scene = load_scene(&input, labels.as_deref(), DomainTag::Source)?;
            let matched = if cfg.random_stride_offset {
                let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
                lidar_distribution_match_random_offset(
                    &scene,
                    &cfg.source_sensor,
                    &cfg.target_sensor,
                    &mut rng,
                )?
            } else {
                lidar_distribution_match(&scene, &cfg.source_sensor, &cfg.target_sensor)?
            };
            let f = downsample_factors(&cfg.source_sensor, &cfg.target_sensor)?;
            save_scene(&matched, &out, labels.is_some())?;
            println!(
                "input_points={} output_points={} vertical={} horizontal={}",
                scene.points.len(),
                matched.points.len(),
                f.vertical,
                f.horizontal
            );
        }
        Command::Mix {
            source,
            target,
            source_labels,
            target_labels,
            out,
        } => {
            let cfg = base_config(config, cli.seed, None)?;
            let src = load_scene(&source, source_labels.as_deref(), DomainTag::Source)?;
            let tgt = load_scene(&target, Some(&target_labels), DomainTag::TargetLabeled)?;
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            let mask = sample_mask(&mut rng, &cfg.mask)?;
            let mixed = polar_mix(&src, &tgt, &mask);
            save_scene(&mixed, &out, true)?;
            let sectors: Vec<String> = mask
                .sectors()
                .iter()
                .map(|s| format!("{:.3}+{:.3}", s.start.to_degrees(), s.width.to_degrees()))
                .collect();
            println!(
                "sectors_deg={} points={} boxes={}",
                sectors.join(","),
                mixed.points.len(),
                mixed.boxes.len()
            );
        }
        Command::Adv { input, labels, out } => {
            let cfg = base_config(config, cli.seed, None)?;
            let oracle = cfg.reference_oracle()?;
            let raw = load_scene(&input, None, DomainTag::TargetUnlabeled)?;
            let pseudo: Vec<Box3D> = match labels {
                Some(p) => read_labels(p)?,
                None => {
                    let (scenes, _) = generate_pseudo_labels(
                        &oracle,
                        std::slice::from_ref(&raw),
                        cfg.pseudo_score_threshold,
                    )?;
                    scenes
                        .into_iter()
                        .next()
                        .map(|s| s.boxes)
                        .unwrap_or_default()
                }
            };
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            let (perturbed, stats) =
                adversarial_perturb(&raw, &pseudo, &oracle, &cfg.perturbation, &mut rng)?;
            save_scene(&perturbed, &out, true)?;
            println!(
                "{}",
                serde_json::to_string(&stats).expect("stats serialize")
            );
        }
        Command::Pipeline { manifest, out } => {
            let (data, manifest_cfg) = read_manifest(&manifest)?;
            let cfg = base_config(config, cli.seed, manifest_cfg)?;
            let oracle = cfg.reference_oracle()?;
            let (first, second) = run_full(&cfg, &data, &oracle)?;
            fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
            let mut log = first.log_lines();
            log.extend(second.log_lines());
            let log_path = out.join(PIPELINE_LOG);
            fs::write(&log_path, log.join("\n") + "\n").map_err(|e| Error::io(&log_path, e))?;
            let summary = Summary {
                seed: cfg.seed,
                targetmix: &first,
                advmix: &second,
            };
            let summary_path = out.join(PIPELINE_SUMMARY);
            let json = serde_json::to_string_pretty(&summary).expect("report serialize");
            fs::write(&summary_path, json + "\n").map_err(|e| Error::io(&summary_path, e))?;
            for line in &log {
                println!("{line}");
            }
        }
        Command::Synth {
            out,
            source,
            target_labeled,
            target_unlabeled,
        } => {
            let cfg = base_config(config, cli.seed, None)?;
            let sizes = DatasetSizes {
                source,
                target_labeled,
                target_unlabeled,
            };
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            let data = synthesize_dataset(&mut rng, &cfg, sizes, &NoiseParams::default())?;
            write_manifest(&out, &data, &cfg)?;
            println!(
                "wrote {} source, {} labeled, {} unlabeled scenes to {}",
                data.source.len(),
                data.target_labeled.len(),
                data.target_unlabeled.len(),
                out.display()
            );
        }
        Command::Gradcheck {
            fixtures,
            step,
            tolerance,
        } => {
            let cfg = base_config(config, cli.seed, None)?;
            if !(step > 0.0 && step.is_finite()) {
                return Err(Error::InvalidParameter(format!(
                    "step {step} must be positive"
                )));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            let err = run_gradcheck(&mut rng, fixtures, step, cfg.smooth_l1_knee)?;
            println!("max_relative_error={err:.3e}");
            if err >= tolerance {
                eprintln!("error: gradient check exceeded tolerance {tolerance:e}");
                return Ok(EXIT_INVALID);
            }
        }
    }
    Ok(EXIT_OK)
}
