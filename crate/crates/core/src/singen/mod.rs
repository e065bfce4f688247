//! Single-image generative augmentation.
//!
//! A stack of small generators is trained coarse to fine on one image. Stage `i`
//! upsamples the output of stage `i - 1`, adds noise and refines it residually; only
//! the newest stage trains while the earlier ones stay frozen, and each stage's
//! critic starts from the previous stage's final critic.

mod model;
mod pyramid;
mod train;

pub use model::{adversarial_losses, critic_forward, critic_loss, generator_forward, reconstruction_loss, GanModel, GanStage};
pub use pyramid::{build_pyramid, pyramid_dims, StagePyramid};
pub use train::{train_gan, GanLog, GanStepLog, GanTrainer, StageLog};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ndgrad::NdError;

#[derive(Debug, Error)]
pub enum GanError {
    #[error("invalid gan config: {0}")]
    Config(String),
    #[error("image {height}x{width} is smaller than the base resolution {base}")]
    TooSmall { height: usize, width: usize, base: usize },
    #[error("{0}")]
    Shape(String),
    #[error("stage {requested} requested but only {available} stages exist")]
    MissingStage { requested: usize, available: usize },
    #[error("non-finite loss at stage {stage}, step {step}")]
    NonFinite { stage: usize, step: usize },
    #[error("checkpoint {path}: {message}")]
    Checkpoint { path: String, message: String },
    #[error(transparent)]
    Nd(#[from] NdError),
}

pub type Result<T, E = GanError> = std::result::Result<T, E>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GanConfig {
    pub num_stages: usize,
    /// Smaller image side at the coarsest stage.
    pub base_resolution: usize,
    /// Weight of the reconstruction term in the generator objective.
    pub alpha: f64,
    pub steps_per_stage: usize,
    /// Adam rate for the stage being trained.
    pub learning_rate: f64,
    /// Multiplier per level of depth for lower stages that train concurrently.
    pub lr_scale: f64,
    pub beta1: f64,
    pub beta2: f64,
    /// How many of the newest stages train at once; 1 freezes everything below.
    pub concurrent_stages: usize,
    pub gp_weight: f64,
    /// Critic updates per generator update.
    pub critic_steps: usize,
    /// Noise amplitude at stage 0.
    pub base_noise: f64,
    /// Later stages use `noise_scale * rmse(upsampled reconstruction, target)`.
    pub noise_scale: f64,
    pub width: usize,
    /// Conv blocks in the stage-0 generator; one more every `growth_every` stages.
    pub base_blocks: usize,
    pub growth_every: usize,
    pub critic_layers: usize,
    pub leaky_slope: f64,
    pub seed: u64,
}

impl Default for GanConfig {
    fn default() -> Self {
        Self::paper()
    }
}

impl GanConfig {
    pub fn paper() -> Self {
        Self {
            num_stages: 10,
            base_resolution: 25,
            alpha: 10.0,
            steps_per_stage: 2000,
            learning_rate: 5e-4,
            lr_scale: 0.1,
            beta1: 0.5,
            beta2: 0.999,
            concurrent_stages: 1,
            gp_weight: 10.0,
            critic_steps: 1,
            base_noise: 1.0,
            noise_scale: 0.1,
            width: 32,
            base_blocks: 3,
            growth_every: 4,
            critic_layers: 5,
            leaky_slope: 0.2,
            seed: 0,
        }
    }

    /// Three stages, 300 steps each: a few minutes on one core for a 63 px patch.
    pub fn desk() -> Self {
        Self { num_stages: 3, steps_per_stage: 300, ..Self::paper() }
    }

    /// `steps_per_stage = 0` is accepted and builds the stages without training them.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(GanError::Config(m.into()));
        if self.num_stages == 0 {
            return bad("num_stages must be at least 1");
        }
        if self.base_resolution < 3 {
            return bad("base_resolution must be at least 3");
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return bad("alpha must be finite and non-negative");
        }
        if !(self.learning_rate > 0.0 && self.lr_scale >= 0.0) {
            return bad("learning_rate must be positive and lr_scale non-negative");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("adam betas must lie in [0, 1)");
        }
        if self.concurrent_stages == 0 || self.critic_steps == 0 {
            return bad("concurrent_stages and critic_steps must be at least 1");
        }
        if self.width == 0 || self.base_blocks < 2 || self.growth_every == 0 || self.critic_layers < 2 {
            return bad("networks need a positive width, at least 2 generator blocks and 2 critic layers");
        }
        if !(self.gp_weight >= 0.0 && self.base_noise >= 0.0 && self.noise_scale >= 0.0) {
            return bad("gp_weight and noise amplitudes must be non-negative");
        }
        Ok(())
    }

    pub fn blocks_at(&self, stage: usize) -> usize {
        self.base_blocks + stage / self.growth_every
    }
}
