//! Procedural metal-sheet imagery with the two defect classes: surface
//! scratches (class 0) and irregular holes (class 1).
//!
//! Everything is driven by an explicit RNG, so `(seed, config)` fully
//! determines the output. Per-image seeds are derived with [`derive_seed`].

mod buffer;
mod dataset;
mod defects;
mod texture;

pub use buffer::ImageBuffer;
pub use dataset::{gen_dataset, gen_image, GeneratedImage};
pub use defects::{inject_hole, inject_scratch, Footprint, HoleShape, ScratchPath, ScratchSpec};
pub use texture::gen_base_texture;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bbox::BBox;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synthesis input: {0}")]
    Invalid(String),
    #[error("writing {file}: {message}")]
    Write { file: String, message: String },
    #[error("reading {file}: {message}")]
    Read { file: String, message: String },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DefectClass {
    Scratch = 0,
    IrregularHole = 1,
}

impl DefectClass {
    pub fn id(self) -> usize {
        self as usize
    }

    pub fn from_id(id: usize) -> Option<Self> {
        match id {
            0 => Some(Self::Scratch),
            1 => Some(Self::IrregularHole),
            _ => None,
        }
    }
}

/// One labeled defect.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GroundTruthBox {
    pub bbox: BBox<f64>,
    pub class: DefectClass,
}

/// Brushed-metal background parameters. All amplitudes are in pixel units of `[0, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TextureConfig {
    pub base_level: f64,
    /// Per-row offset noise, smoothed across `row_smooth` neighbouring rows.
    pub row_noise: f64,
    pub row_smooth: usize,
    /// Along-row streak noise, smoothed over `streak_length` pixels.
    pub streak_noise: f64,
    pub streak_length: usize,
    pub grain: f64,
    /// Amplitude of a low-frequency sinusoidal shading field.
    pub shading: f64,
    /// Expected range of the background pixel standard deviation.
    pub std_bounds: [f64; 2],
}

impl Default for TextureConfig {
    fn default() -> Self {
        Self {
            base_level: 0.5,
            row_noise: 0.03,
            row_smooth: 2,
            streak_noise: 0.02,
            streak_length: 24,
            grain: 0.01,
            shading: 0.04,
            std_bounds: [0.01, 0.08],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub seed: u64,
    pub patch_size: usize,
    pub channels: usize,
    /// Probability that an image carries no labeled defect.
    pub defect_free_prob: f64,
    pub defects_per_image: [usize; 2],
    /// Probability that a defect is a scratch (otherwise an irregular hole).
    pub scratch_fraction: f64,
    /// Unlabeled, perfectly round holes drawn as distractors.
    pub nominal_holes: [usize; 2],
    pub scratch_length: [f64; 2],
    pub scratch_width: [f64; 2],
    /// Magnitude of the brightness change; the sign is random.
    pub scratch_contrast: [f64; 2],
    /// Standard deviation of the heading change per walk step (radians).
    pub scratch_wander: f64,
    pub hole_radius_mean: f64,
    /// Relative uniform jitter applied to the hole radius.
    pub hole_radius_jitter: f64,
    pub hole_irregular_amplitude: [f64; 2],
    /// Holes with harmonic amplitude above this are labeled irregular.
    pub hole_irregular_threshold: f64,
    pub hole_level: f64,
    pub texture: TextureConfig,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            patch_size: 512,
            channels: 1,
            defect_free_prob: 0.1,
            defects_per_image: [1, 3],
            scratch_fraction: 0.371,
            nominal_holes: [0, 2],
            scratch_length: [60.0, 200.0],
            scratch_width: [1.5, 4.0],
            scratch_contrast: [0.15, 0.35],
            scratch_wander: 0.06,
            hole_radius_mean: 22.0,
            hole_radius_jitter: 0.2,
            hole_irregular_amplitude: [0.15, 0.35],
            hole_irregular_threshold: 0.08,
            hole_level: 0.08,
            texture: TextureConfig::default(),
        }
    }
}

impl SynthConfig {
    /// Same layout at a different patch size: every length scales with the patch.
    pub fn scaled_to(&self, patch_size: usize) -> Self {
        let f = patch_size as f64 / self.patch_size as f64;
        let mut c = self.clone();
        c.patch_size = patch_size;
        c.scratch_length = [self.scratch_length[0] * f, self.scratch_length[1] * f];
        c.scratch_width = [(self.scratch_width[0] * f).max(1.0), (self.scratch_width[1] * f).max(1.5)];
        c.hole_radius_mean = self.hole_radius_mean * f;
        c.texture.streak_length = ((self.texture.streak_length as f64 * f).round() as usize).max(1);
        c
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::Invalid(m));
        if self.patch_size < 16 {
            return bad(format!("patch_size {} too small", self.patch_size));
        }
        if !(self.channels == 1 || self.channels == 3) {
            return bad(format!("channels must be 1 or 3, got {}", self.channels));
        }
        for (name, p) in [("defect_free_prob", self.defect_free_prob), ("scratch_fraction", self.scratch_fraction)] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{name} {p} outside [0, 1]"));
            }
        }
        let ranges = [
            ("scratch_length", self.scratch_length),
            ("scratch_width", self.scratch_width),
            ("scratch_contrast", self.scratch_contrast),
            ("hole_irregular_amplitude", self.hole_irregular_amplitude),
            ("texture.std_bounds", self.texture.std_bounds),
        ];
        for (name, [lo, hi]) in ranges {
            if !(lo <= hi) || lo < 0.0 {
                return bad(format!("{name} range [{lo}, {hi}] is empty or negative"));
            }
        }
        for (name, [lo, hi]) in [("defects_per_image", self.defects_per_image), ("nominal_holes", self.nominal_holes)] {
            if lo > hi {
                return bad(format!("{name} range [{lo}, {hi}] is empty"));
            }
        }
        if self.scratch_width[0] <= 0.0 || self.hole_radius_mean <= 0.0 {
            return bad("scratch width and hole radius must be positive".into());
        }
        if !(0.0..1.0).contains(&self.hole_radius_jitter) || self.hole_irregular_amplitude[1] >= 1.0 {
            return bad("hole jitter and amplitude must be below 1".into());
        }
        if self.scratch_length[0] < 2.0 {
            return bad("scratch length must be at least 2 px".into());
        }
        Ok(())
    }
}

/// splitmix64 finalizer.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent per-item seed, `splitmix64(seed ^ splitmix64(index))`.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    splitmix64(seed ^ splitmix64(index))
}

pub fn rng_for(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
