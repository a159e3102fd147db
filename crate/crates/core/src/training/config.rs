use serde::{Deserialize, Serialize};

use super::optim::{scaled_lr, Schedule};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Pretrain,
    Finetune,
}

/// Optimizer and loop settings for one phase.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub phase: Phase,
    pub base_lr: f64,
    /// Apply the `base_lr * batch / 256` scaling rule.
    pub scale_lr: bool,
    pub weight_decay: f64,
    pub betas: [f64; 2],
    pub eps: f64,
    pub batch_size: usize,
    /// Upper bound on epochs; fine-tuning usually stops earlier.
    pub epochs: usize,
    pub warmup_epochs: usize,
    pub schedule: Schedule,
    /// Epochs without validation improvement before stopping; 0 disables.
    pub patience: usize,
    pub mask_ratio: f64,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grad_clip: Option<f64>,
}

impl TrainConfig {
    /// AdamW, cosine decay, 85% masking.
    pub fn pretrain() -> Self {
        TrainConfig {
            phase: Phase::Pretrain,
            base_lr: 1e-3,
            scale_lr: true,
            weight_decay: 0.05,
            betas: [0.9, 0.95],
            eps: 1e-8,
            batch_size: 64,
            epochs: 40,
            warmup_epochs: 0,
            schedule: Schedule::Cosine,
            patience: 0,
            mask_ratio: 0.85,
            seed: 0,
            grad_clip: None,
        }
    }

    /// Adam, learning rate halved every epoch, early stopping after 3
    /// stale epochs.
    pub fn finetune() -> Self {
        TrainConfig {
            phase: Phase::Finetune,
            base_lr: 1e-4,
            scale_lr: false,
            weight_decay: 0.0,
            betas: [0.9, 0.999],
            batch_size: 32,
            epochs: 100,
            schedule: Schedule::Exponential { gamma: 0.5 },
            patience: 3,
            ..TrainConfig::pretrain()
        }
    }

    pub fn for_phase(phase: Phase) -> Self {
        match phase {
            Phase::Pretrain => Self::pretrain(),
            Phase::Finetune => Self::finetune(),
        }
    }

    /// Peak learning rate actually used by the optimizer.
    pub fn effective_lr(&self) -> f64 {
        if self.scale_lr {
            scaled_lr(self.base_lr, self.batch_size)
        } else {
            self.base_lr
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::config(m));
        if !(self.base_lr.is_finite() && self.base_lr > 0.0) {
            return fail(format!("base_lr must be positive, got {}", self.base_lr));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return fail("batch_size and epochs must be at least 1".into());
        }
        if self.betas.iter().any(|b| !(0.0..1.0).contains(b)) {
            return fail(format!("betas must lie in [0, 1), got {:?}", self.betas));
        }
        if self.eps.is_nan() || self.eps <= 0.0 || self.weight_decay.is_nan() || self.weight_decay < 0.0 {
            return fail("eps must be positive and weight_decay non-negative".into());
        }
        if !(0.0..1.0).contains(&self.mask_ratio) {
            return fail(format!("mask_ratio must be in [0, 1), got {}", self.mask_ratio));
        }
        if let Schedule::Exponential { gamma } = self.schedule {
            if !(gamma > 0.0 && gamma <= 1.0) {
                return fail(format!("exponential gamma must be in (0, 1], got {gamma}"));
            }
        }
        if self.grad_clip.is_some_and(|c| c.is_nan() || c <= 0.0) {
            return fail("grad_clip must be positive".into());
        }
        Ok(())
    }
}
