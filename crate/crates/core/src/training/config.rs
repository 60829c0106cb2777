use crate::error::{Error, Result};
use crate::task::Task;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Mixup is skipped entirely when false (λ fixed at 1).
    pub mixup: bool,
    pub mixup_alpha: f64,
    pub focal_gamma: f64,
    /// Smoothing ε of the effective-number class weights.
    pub effective_eps: f64,
    pub weight_decay: f64,
    pub seed: u64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
}

impl TrainConfig {
    pub fn for_task(task: Task) -> Self {
        let base = TrainConfig {
            learning_rate: 7e-5,
            batch_size: 128,
            epochs: 100,
            mixup: true,
            mixup_alpha: 0.3,
            focal_gamma: 2.25,
            effective_eps: 1.0 - 1e-2,
            weight_decay: 0.0,
            seed: 0,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
        };
        match task {
            Task::Sleep => base,
            Task::Anesthesia => TrainConfig {
                learning_rate: 1e-5,
                batch_size: 256,
                mixup_alpha: 0.5,
                focal_gamma: 2.0,
                effective_eps: 1.0 - 5e-4,
                ..base
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str, v: f64| Err(Error::Config(format!("{what} out of range: {v}")));
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return bad("learning_rate (must be > 0)", self.learning_rate);
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be ≥ 1".into()));
        }
        if !(self.mixup_alpha > 0.0) || !self.mixup_alpha.is_finite() {
            return bad("mixup_alpha (must be > 0)", self.mixup_alpha);
        }
        if !(self.focal_gamma >= 0.0) || !self.focal_gamma.is_finite() {
            return bad("focal_gamma (must be ≥ 0)", self.focal_gamma);
        }
        if !(0.0..1.0).contains(&self.effective_eps) {
            return bad("effective_eps (must lie in [0, 1))", self.effective_eps);
        }
        if !(self.weight_decay >= 0.0) || !self.weight_decay.is_finite() {
            return bad("weight_decay (must be ≥ 0)", self.weight_decay);
        }
        if !(0.0..1.0).contains(&self.adam_beta1) {
            return bad("adam_beta1", self.adam_beta1);
        }
        if !(0.0..1.0).contains(&self.adam_beta2) {
            return bad("adam_beta2", self.adam_beta2);
        }
        if !(self.adam_eps > 0.0) {
            return bad("adam_eps", self.adam_eps);
        }
        Ok(())
    }
}
