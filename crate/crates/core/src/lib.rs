//! Cross-sensor LiDAR domain augmentation.
//!
//! - [`sensor`]: range-image beam resampling from one sensor to another.
//! - [`mix`]: polar sector mixing of source and target scenes.
//! - [`adv`]: adversarial point perturbation, Point-MixUp and box consistency.
//! - [`pipeline`]: the two-stage driver over a pluggable detector.
//! - [`io`], [`config`], [`synth`], [`cli`]: files, settings, fixtures and the
//!   command line.

pub mod adv;
pub mod cli;
pub mod config;
pub mod error;
pub mod geom;
pub mod gradcheck;
pub mod io;
pub mod mix;
pub mod pipeline;
pub mod sensor;
pub mod synth;

pub use error::{Error, Result};
pub use geom::{Box3D, DomainTag, Point, Scene};
pub use sensor::SensorSpec;
