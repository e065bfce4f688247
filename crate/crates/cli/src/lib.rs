//! Library side of the `aoi` command: configuration, the pipeline stages and
//! their on-disk layout under the output directory.
//!
//! ```text
//! <out>/resolved_config.json
//! <out>/data/        synthesized images, manifest.json, train/val/test.json
//! <out>/augment/     originals + generated images, manifests, gan/<source>/
//! <out>/detector/    baseline/ and augmented/ checkpoints with train_log.json
//! <out>/eval/        predictions, report.json, report.md, timing.json
//! ```

pub mod augment;
pub mod config;
pub mod stages;

use std::path::{Path, PathBuf};

use thiserror::Error;

use aoi_core::evalkit::EvalError;
use aoi_core::imgsynth::SynthError;
use aoi_core::manifest::ManifestError;
use aoi_core::singen::GanError;
use aoi_core::yolite::YoliteError;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("{what} not found; run `aoi {producer}` first")]
    Missing { what: PathBuf, producer: &'static str },
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Manifest(#[from] ManifestError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Gan(GanError),
    #[error(transparent)]
    Detector(YoliteError),
    #[error(transparent)]
    Scada(#[from] aoi_scada::ScadaError),
}

impl From<GanError> for CliError {
    fn from(e: GanError) -> Self {
        match e {
            GanError::NonFinite { .. } => Self::Numerical(e.to_string()),
            e => Self::Gan(e),
        }
    }
}

impl From<YoliteError> for CliError {
    fn from(e: YoliteError) -> Self {
        match e {
            YoliteError::NonFinite { .. } => Self::Numerical(e.to_string()),
            e => Self::Detector(e),
        }
    }
}

impl CliError {
    /// Process exit status: 2 config, 3 missing input, 4 numerical, 1 anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) => 2,
            Self::Missing { .. } => 3,
            Self::Numerical(_) => 4,
            _ => 1,
        }
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;

pub(crate) fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io { path: path.to_path_buf(), source }
}

pub(crate) fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    std::fs::write(path, text).map_err(io_err(path))
}

/// `path` must exist, otherwise the stage that writes it has not run.
pub(crate) fn require(path: &Path, producer: &'static str) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::Missing { what: path.to_path_buf(), producer })
    }
}
