//! Experiment orchestration behind a common strategy interface.
//!
//! Each experiment consumes the shared [`Config`] and an output directory,
//! runs every configured seed sequentially (the job queue degenerates to a
//! single worker on this target, which also keeps artifact writes trivially
//! deterministic), and returns the artifact paths it wrote.

pub mod boundary;
pub mod manifold;
pub mod sweep;

use crate::config::Config;
use gradlens_core::error::{Error, Result};
use std::path::{Path, PathBuf};

pub trait Experiment {
    fn name(&self) -> &'static str;
    fn about(&self) -> &'static str;
    fn run(&self, cfg: &Config, out_dir: &Path) -> Result<Vec<PathBuf>>;
}

/// All built-in experiments, in CLI listing order.
pub fn registry() -> Vec<Box<dyn Experiment>> {
    vec![
        Box::new(boundary::BoundaryTilting),
        Box::new(manifold::ManifoldDistance),
        Box::new(sweep::RoarKar),
        Box::new(sweep::Tradeoff),
    ]
}

/// Finds an experiment by CLI name.
pub fn lookup(name: &str) -> Result<Box<dyn Experiment>> {
    registry().into_iter().find(|e| e.name() == name).ok_or_else(|| Error::InvalidParameter {
        name: "experiment",
        reason: format!(
            "unknown experiment '{name}'; known: {}",
            registry().iter().map(|e| e.name()).collect::<Vec<_>>().join(", ")
        ),
    })
}
