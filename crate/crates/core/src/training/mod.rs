//! Two-phase AdamW training with cosine learning-rate tail, checkpointing
//! and a loss log.

mod adamw;
mod checkpoint;
mod trainer;

use serde::{Deserialize, Serialize};

use crate::diffusion::BetaSchedule;
use crate::error::{config_err, Result};
use crate::net::{Ablations, Phase};

pub use adamw::{adamw_step, clip_grad_norm, AdamState, AdamWConfig};
pub use checkpoint::{
    load_checkpoint, save_checkpoint, Checkpoint, CheckpointMeta, TensorEntry, ADAM_M_PREFIX, ADAM_V_PREFIX,
};
pub use trainer::{train, StepRecord, TrainData, Trainer, LOSS_CSV_HEADER};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub phase1_iters: usize,
    pub phase2_iters: usize,
    pub batch_size: usize,
    pub lr0: f64,
    pub adamw: AdamWConfig,
    /// Final iterations over which the learning rate anneals to zero.
    pub cosine_tail_iters: usize,
    /// Global gradient-norm ceiling; `None` disables clipping.
    pub grad_clip: Option<f64>,
    /// Write a checkpoint every this many iterations (0: final only).
    pub checkpoint_every: usize,
    pub beta_schedule: BetaSchedule,
    pub seed: u64,
    pub ablation: Ablations,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            phase1_iters: 1000,
            phase2_iters: 1000,
            batch_size: 4,
            lr0: 1e-4,
            adamw: AdamWConfig::default(),
            cosine_tail_iters: 500,
            grad_clip: Some(1.0),
            checkpoint_every: 0,
            beta_schedule: BetaSchedule::default(),
            seed: 0,
            ablation: Ablations::none(),
        }
    }
}

impl TrainConfig {
    pub fn total_iters(&self) -> usize {
        self.phase1_iters + self.phase2_iters
    }

    pub fn phase_at(&self, iter: usize) -> Phase {
        if iter < self.phase1_iters {
            Phase::One
        } else {
            Phase::Two
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return Err(config_err!("lr0 must be positive, got {}", self.lr0));
        }
        if self.batch_size == 0 {
            return Err(config_err!("batch_size must be positive"));
        }
        if self.cosine_tail_iters > self.total_iters() {
            return Err(config_err!(
                "cosine tail {} longer than the run ({})",
                self.cosine_tail_iters,
                self.total_iters()
            ));
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0) {
                return Err(config_err!("grad_clip must be positive, got {c}"));
            }
        }
        self.adamw.validate()?;
        self.ablation.validate()
    }
}

/// `lr0` until the tail, then `lr0·½(1 + cos(π·progress))` with progress
/// running 0 → 1 over the tail, so the final iteration gets exactly 0.
pub fn lr_at(iter: usize, cfg: &TrainConfig) -> f64 {
    let total = cfg.total_iters();
    let tail = cfg.cosine_tail_iters;
    let start = total - tail.min(total);
    if tail == 0 || iter < start {
        return cfg.lr0;
    }
    let progress = if tail == 1 {
        1.0
    } else {
        ((iter - start) as f64 / (tail - 1) as f64).min(1.0)
    };
    if progress >= 1.0 {
        return 0.0;
    }
    cfg.lr0 * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
}
