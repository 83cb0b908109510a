//! Alternating adversarial training: one discriminator step then one
//! generator step per iteration, paired labeled/unlabeled batch streams,
//! confidence-gated self-training, deterministic seeding, checkpoint/resume.

mod metrics_log;
mod run;
mod sampler;
mod state_io;

pub use metrics_log::MetricsCsv;
pub use run::{
    clear_interrupt, eval_on_test, init_state, request_interrupt, resume_loop, train, train_step,
    GateWindow, StepRecord, TrainOutcome, TrainState, LESION_CLASS_INDEX,
};
pub use sampler::{BatchSampler, SamplerSnapshot};
pub use state_io::{load_train_state, save_checkpoint};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::losses::LossWeights;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("labeled set is empty")]
    EmptyLabeledSet,
    #[error("non-finite {term} loss at iteration {iteration}")]
    NonFinite { iteration: usize, term: String },
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Net(#[from] crate::nets::NetError),
    #[error("loss error at iteration {iteration}: {source}")]
    Loss {
        iteration: usize,
        #[source]
        source: crate::losses::LossError,
    },
    #[error("evaluation failed: {0}")]
    Metrics(String),
    #[error(transparent)]
    Checkpoint(#[from] crate::nets::CheckpointError),
    #[error("io error at {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// All training hyperparameters. Defaults follow the published recipe
/// (SGD 2.5e-4 for the generator, Adam 1e-4 for the discriminator,
/// tau 0.6, batch 12); [`TrainConfig::desk_profile`] shrinks the batch and
/// backbone for CPU-scale acceptance runs.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TrainConfig {
    pub loss_weights: LossWeights,
    /// Confidence threshold of the self-training gate.
    pub tau: f64,
    pub gen_lr: f64,
    pub gen_momentum: f64,
    pub gen_weight_decay: f64,
    pub disc_lr: f64,
    pub disc_betas: (f64, f64),
    pub batch_size: usize,
    pub iterations: usize,
    pub seed: u64,
    /// Checkpoint every N iterations (0 = final checkpoint only).
    pub checkpoint_every: usize,
    /// Evaluate on the test split every N iterations (0 = final eval only).
    pub eval_every: usize,
    /// Write a metrics row every N iterations.
    pub log_every: usize,
    /// Base channel width of the reference generator backbone.
    pub base_width: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            loss_weights: LossWeights::default(),
            tau: 0.6,
            gen_lr: 2.5e-4,
            gen_momentum: 0.9,
            gen_weight_decay: 5e-4,
            disc_lr: 1e-4,
            disc_betas: (0.9, 0.999),
            batch_size: 12,
            iterations: 2000,
            seed: 1,
            checkpoint_every: 0,
            eval_every: 500,
            log_every: 1,
            base_width: 16,
        }
    }
}

impl TrainConfig {
    /// CPU-scale profile used by the acceptance experiments: batch 6,
    /// 2000 iterations, a slim backbone.
    pub fn desk_profile() -> Self {
        TrainConfig {
            batch_size: 6,
            iterations: 2000,
            base_width: 8,
            ..TrainConfig::default()
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        self.loss_weights
            .validate()
            .map_err(|e| TrainError::InvalidConfig(e.to_string()))?;
        if !(0.0..=1.0).contains(&self.tau) {
            return Err(TrainError::InvalidConfig(format!("tau {} outside [0,1]", self.tau)));
        }
        for (name, lr) in [("gen_lr", self.gen_lr), ("disc_lr", self.disc_lr)] {
            if !(lr > 0.0 && lr.is_finite()) {
                return Err(TrainError::InvalidConfig(format!("{name} {lr} must be positive")));
            }
        }
        if self.batch_size == 0 {
            return Err(TrainError::InvalidConfig("batch_size must be >= 1".into()));
        }
        if self.iterations == 0 {
            return Err(TrainError::InvalidConfig("iterations must be >= 1".into()));
        }
        if self.base_width < 4 {
            return Err(TrainError::InvalidConfig(format!(
                "base_width {} must be >= 4",
                self.base_width
            )));
        }
        for b in [self.disc_betas.0, self.disc_betas.1] {
            if !(0.0..1.0).contains(&b) {
                return Err(TrainError::InvalidConfig(format!("disc beta {b} outside [0,1)")));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_the_published_recipe() {
        let cfg = TrainConfig::default();
        assert_eq!(cfg.tau, 0.6);
        assert_eq!(cfg.gen_lr, 2.5e-4);
        assert_eq!(cfg.disc_lr, 1e-4);
        assert_eq!(cfg.batch_size, 12);
        assert_eq!(cfg.loss_weights.w_dice, 0.6);
        assert_eq!(cfg.loss_weights.w_ce, 0.4);
        assert_eq!(cfg.loss_weights.w_fm, 0.1);
        assert_eq!(cfg.loss_weights.w_st, 1.0);
        cfg.validate().unwrap();
        TrainConfig::desk_profile().validate().unwrap();
    }

    #[test]
    fn validation_rejects_bad_fields() {
        let mut cfg = TrainConfig::default();
        cfg.tau = 1.5;
        assert!(cfg.validate().is_err());
        let mut cfg = TrainConfig::default();
        cfg.gen_lr = 0.0;
        assert!(cfg.validate().is_err());
        let mut cfg = TrainConfig::default();
        cfg.batch_size = 0;
        assert!(cfg.validate().is_err());
    }
}
