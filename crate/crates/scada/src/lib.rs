//! Simulated inspection line: a conveyor carrying a virtual metal sheet under a
//! line-scan camera, inline detection over windows of captured rows, and an
//! HTTP/JSON control API.
//!
//! The [`Simulator`] is a plain synchronous state machine driven by `tick(dt)`
//! on a virtual clock. [`spawn_line`] runs it on its own thread and feeds it
//! commands through a queue; [`router`] exposes that handle over HTTP.

mod api;
mod service;
mod sheet;
mod sim;

pub use api::{router, serve};
pub use service::{spawn_line, Command, LineHandle, Pace};
pub use sheet::VirtualSheet;
pub use sim::{ConveyorState, DefectEvent, LineMode, SheetBox, Simulator, Stats, TickOutput};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use aoi_core::imgsynth::{SynthConfig, SynthError};
use aoi_core::yolite::YoliteError;

#[derive(Debug, Error)]
pub enum ScadaError {
    /// The command is not allowed in the current mode.
    #[error("{0}")]
    Conflict(String),
    #[error("{0}")]
    Invalid(String),
    #[error("no detector loaded; inspection is disabled")]
    NoDetector,
    #[error("invalid scada config: {0}")]
    Config(String),
    #[error("the line service has shut down")]
    Shutdown,
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Detector(#[from] YoliteError),
}

pub type Result<T, E = ScadaError> = std::result::Result<T, E>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScadaConfig {
    /// Listen port; `AOI_PORT` takes precedence.
    pub port: u16,
    /// Virtual time per simulation step.
    pub tick_ms: u64,
    pub sheet_length_mm: f64,
    pub sheet_width_mm: f64,
    /// Sheet raster pitch across the line.
    pub mm_per_px: f64,
    /// Line-scan rows per millimetre of travel.
    pub rows_per_mm: f64,
    /// Labeled defects drawn per sheet, inclusive range.
    pub defects: [usize; 2],
    /// Unlabeled round holes per sheet, inclusive range.
    pub nominal_holes: [usize; 2],
    /// Defect shapes and texture; lengths are in sheet pixels.
    pub synth: SynthConfig,
    /// Speeds above this blur each row over neighbouring rows.
    pub blur_threshold_mm_s: f64,
    /// Blur kernel length in rows per mm/s of speed.
    pub blur_rows_per_mm_s: f64,
    /// Fraction of the window side shared by neighbouring windows.
    pub window_overlap: f64,
    /// IoU above which two same-class detections are the same defect.
    pub nms_iou: f64,
    pub conf_threshold: f64,
    pub seed: u64,
}

impl Default for ScadaConfig {
    fn default() -> Self {
        Self {
            port: 8080,
            tick_ms: 50,
            sheet_length_mm: 2000.0,
            sheet_width_mm: 400.0,
            mm_per_px: 0.5,
            rows_per_mm: 2.0,
            defects: [12, 24],
            nominal_holes: [4, 8],
            synth: SynthConfig::default().scaled_to(256),
            blur_threshold_mm_s: 100.0,
            blur_rows_per_mm_s: 0.02,
            window_overlap: 0.25,
            nms_iou: 0.5,
            conf_threshold: 0.25,
            seed: 0,
        }
    }
}

fn is_whole(v: f64) -> bool {
    (v - v.round()).abs() < 1e-9 && v.round() >= 1.0
}

impl ScadaConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(ScadaError::Config(m));
        let pos = |v: f64| v > 0.0 && v.is_finite();
        if !(pos(self.sheet_length_mm) && pos(self.sheet_width_mm) && pos(self.mm_per_px) && pos(self.rows_per_mm)) {
            return bad("sheet size, mm_per_px and rows_per_mm must be positive".into());
        }
        if !is_whole(self.sheet_width_mm / self.mm_per_px) {
            return bad(format!("sheet width {} mm is not a whole number of {} mm pixels", self.sheet_width_mm, self.mm_per_px));
        }
        if !is_whole(self.sheet_length_mm * self.rows_per_mm) || !is_whole(self.sheet_length_mm / self.mm_per_px) {
            return bad("sheet length must be a whole number of rows and pixels".into());
        }
        if self.tick_ms == 0 {
            return bad("tick_ms must be positive".into());
        }
        if self.defects[0] > self.defects[1] || self.nominal_holes[0] > self.nominal_holes[1] {
            return bad("defect count ranges must be ordered".into());
        }
        if !(self.blur_threshold_mm_s >= 0.0 && self.blur_rows_per_mm_s >= 0.0) {
            return bad("blur parameters must be non-negative".into());
        }
        if !(0.0..1.0).contains(&self.window_overlap) {
            return bad(format!("window_overlap {} outside [0, 1)", self.window_overlap));
        }
        if !(0.0..=1.0).contains(&self.nms_iou) || !(0.0..=1.0).contains(&self.conf_threshold) {
            return bad("nms_iou and conf_threshold must lie in [0, 1]".into());
        }
        self.synth.validate()?;
        Ok(())
    }

    /// Sheet raster size `(rows, cols)`.
    pub fn sheet_pixels(&self) -> (usize, usize) {
        ((self.sheet_length_mm / self.mm_per_px).round() as usize, (self.sheet_width_mm / self.mm_per_px).round() as usize)
    }

    /// Line-scan rows in one full sheet.
    pub fn sheet_rows(&self) -> usize {
        (self.sheet_length_mm * self.rows_per_mm).round() as usize
    }

    pub fn effective_port(&self) -> u16 {
        std::env::var("AOI_PORT").ok().and_then(|p| p.parse().ok()).unwrap_or(self.port)
    }
}
