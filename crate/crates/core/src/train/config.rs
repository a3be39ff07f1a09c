use serde::{Deserialize, Serialize};

use crate::error::{config_err, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub steps_per_epoch: usize,
    pub batch_size: usize,
    pub lr_init: f64,
    pub lr_floor: f64,
    /// Evaluations without improvement before the learning rate decays.
    pub plateau_window: usize,
    /// Improvement (nats) that counts as progress.
    pub plateau_epsilon: f64,
    pub decay_factor: f64,
    /// Global gradient-norm clip; `None` disables clipping.
    pub grad_clip: Option<f64>,
    pub seed: u64,
    /// Steps between evaluations; 0 means once per epoch.
    pub eval_every: usize,
    /// Upper bound on held-out windows (or samples) per evaluation.
    pub eval_windows: usize,
    /// Fill the `wall_s` column of the metrics CSV. Off by default so
    /// repeated runs produce identical files.
    pub log_wall_clock: bool,
    /// Stop once held-out accuracy exceeds this (classification only).
    pub early_stop_acc: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            steps_per_epoch: 200,
            batch_size: 8,
            lr_init: 3e-4,
            lr_floor: 1e-5,
            plateau_window: 3,
            plateau_epsilon: 1e-3,
            decay_factor: 0.5,
            grad_clip: Some(1.0),
            seed: 0,
            eval_every: 0,
            eval_windows: 64,
            log_wall_clock: false,
            early_stop_acc: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr_floor > 0.0 && self.lr_floor <= self.lr_init) {
            return config_err(format!("need 0 < lr_floor ({}) <= lr_init ({})", self.lr_floor, self.lr_init));
        }
        if !(self.decay_factor > 0.0 && self.decay_factor < 1.0) {
            return config_err(format!("decay_factor {} must lie in (0, 1)", self.decay_factor));
        }
        if self.plateau_window == 0 {
            return config_err("plateau_window must be at least 1");
        }
        if self.batch_size == 0 || self.steps_per_epoch == 0 || self.eval_windows == 0 {
            return config_err("batch_size, steps_per_epoch and eval_windows must be positive");
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0) {
                return config_err(format!("grad_clip {c} must be positive"));
            }
        }
        Ok(())
    }

    pub fn total_steps(&self) -> usize {
        self.epochs * self.steps_per_epoch
    }

    pub fn eval_interval(&self) -> usize {
        if self.eval_every == 0 {
            self.steps_per_epoch
        } else {
            self.eval_every
        }
    }
}
