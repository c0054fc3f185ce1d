//! Action prediction, per-step pipeline, rollouts and the training loop.

pub mod predictor;
pub mod rollout;
pub mod step;
pub mod train;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::discovery::DiscoveryError;
use crate::embedding::StoreError;
use crate::scoring::ScoringError;
use crate::shifting::ShiftError;
use crate::sim::SimError;
use crate::tensorfile::TensorFileError;

pub use predictor::{action_logits, il_loss, ActionPredictor, AGENT_MAGIC};
pub use rollout::{rollout, teacher_forced_steps, Dataset, EpisodeTrace, ForcedStep, RolloutMode, StepRecord};
pub use step::{step_backward, step_forward, step_losses, LossWeights, Models, StepForward, StepInputs, StepLosses};
pub use train::{evaluate, initial_models, train, train_with, AdvantageSource, TrainLogRecord, TrainOutcome};

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("index {index} out of range for {len} actions")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("no training episodes")]
    EmptyDataset,
    #[error("no usable priors for instruction {0:?}")]
    MissingPriors(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("store: {0}")]
    Store(#[from] StoreError),
    #[error("scoring: {0}")]
    Scoring(#[from] ScoringError),
    #[error("discovery: {0}")]
    Discovery(#[from] DiscoveryError),
    #[error("shifting: {0}")]
    Shift(#[from] ShiftError),
    #[error("sim: {0}")]
    Sim(#[from] SimError),
    #[error("checkpoint: {0}")]
    Checkpoint(#[from] TensorFileError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

/// How cooccurrence scores are produced at every step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "value")]
pub enum ScoreMode {
    /// Scores come from the trainable scoring network.
    Learned,
    /// Every score is frozen at this constant.
    Fixed(f64),
    /// Landmark pipeline disabled; the predictor sees raw views.
    Off,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr_scoring: f64,
    pub lr_agent: f64,
    pub lambda_cs: f64,
    pub lambda_ct: f64,
    /// Weight of the externally supplied advantage term; 0 disables it.
    pub lambda_rl: f64,
    pub tau: f64,
    pub n_co: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub score_mode: ScoreMode,
    pub dropout: f64,
    /// Fixed softmax temperature of the action predictor.
    pub temperature_a: f64,
    pub max_steps: usize,
    /// Epochs spent training the predictor alone before scoring is enabled.
    pub warm_start_epochs: usize,
    /// Greedy eval on the eval split every this many epochs; 0 disables it.
    pub eval_every: usize,
    pub use_photo_prompt: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr_scoring: 0.1,
            lr_agent: 0.01,
            lambda_cs: 0.1,
            lambda_ct: 0.1,
            lambda_rl: 0.0,
            tau: 0.5,
            n_co: 5,
            epochs: 20,
            batch_size: 8,
            seed: 0,
            score_mode: ScoreMode::Learned,
            dropout: crate::scoring::DEFAULT_DROPOUT,
            temperature_a: 0.1,
            max_steps: 15,
            warm_start_epochs: 0,
            eval_every: 0,
            use_photo_prompt: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), AgentError> {
        let bad = |m: &str| Err(AgentError::InvalidConfig(m.to_string()));
        if !(self.lr_scoring > 0.0 && self.lr_agent > 0.0) {
            return bad("learning rates must be positive");
        }
        if !(self.tau > 0.0 && self.temperature_a > 0.0) {
            return bad("temperatures must be positive");
        }
        if !(self.lambda_cs >= 0.0 && self.lambda_ct >= 0.0 && self.lambda_rl >= 0.0) {
            return bad("loss weights must be nonnegative");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must lie in [0, 1)");
        }
        if self.batch_size == 0 || self.max_steps == 0 {
            return bad("batch_size and max_steps must be positive");
        }
        Ok(())
    }

    pub fn weights(&self) -> LossWeights {
        LossWeights {
            cs: self.lambda_cs,
            ct: self.lambda_ct,
            rl: self.lambda_rl,
        }
    }
}

/// `(il + λ_rl·rl) + λ_cs·cs + λ_ct·ct`; the advantage term only counts when
/// one is supplied.
pub fn total_loss(il: f64, cs: f64, ct: f64, rl: Option<f64>, cfg: &TrainConfig) -> f64 {
    il + rl.map_or(0.0, |r| cfg.lambda_rl * r) + cfg.lambda_cs * cs + cfg.lambda_ct * ct
}
