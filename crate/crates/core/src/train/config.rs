use crate::objective::{DEFAULT_LAMBDA, DEFAULT_MD};
use crate::text::mask::DEFAULT_EPSILON;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    /// Peak learning rate.
    pub lr: f64,
    pub warmup_ratio: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Upper bound on `batch_size × longest sequence` per step.
    pub max_tokens: usize,
    pub max_steps: usize,
    /// Dev evaluations without improvement before stopping.
    pub patience: usize,
    pub eval_every: usize,
    pub log_every: usize,
    pub seed: u64,
    pub lambda: f64,
    pub epsilon: f64,
    pub md: Option<usize>,
    /// Teacher only.
    pub label_smoothing: f64,
    /// Stop once training-set token accuracy reaches this value (checked at
    /// evaluation steps).
    pub stop_at_accuracy: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 3e-4,
            warmup_ratio: 0.1,
            weight_decay: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            max_tokens: 1024,
            max_steps: 2000,
            patience: 5,
            eval_every: 200,
            log_every: 50,
            seed: 1,
            lambda: DEFAULT_LAMBDA,
            epsilon: DEFAULT_EPSILON,
            md: Some(DEFAULT_MD),
            label_smoothing: 0.1,
            stop_at_accuracy: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.lr > 0.0) || !(self.adam_eps > 0.0) {
            return bad("learning rate and adam epsilon must be positive".into());
        }
        if !(0.0..1.0).contains(&self.warmup_ratio) {
            return bad(format!("warmup ratio {} outside [0, 1)", self.warmup_ratio));
        }
        if self.weight_decay < 0.0
            || !(0.0..1.0).contains(&self.beta1)
            || !(0.0..1.0).contains(&self.beta2)
        {
            return bad("weight decay must be >= 0 and betas in [0, 1)".into());
        }
        if self.patience == 0 || self.max_steps == 0 || self.max_tokens == 0 {
            return bad("patience, max_steps and max_tokens must be >= 1".into());
        }
        if self.eval_every == 0 || self.log_every == 0 {
            return bad("eval_every and log_every must be >= 1".into());
        }
        if !(self.epsilon > 0.0 && self.epsilon <= 1.0) {
            return bad(format!("epsilon {} outside (0, 1]", self.epsilon));
        }
        if self.lambda < 0.0 || !(0.0..1.0).contains(&self.label_smoothing) {
            return bad("lambda must be >= 0 and label smoothing in [0, 1)".into());
        }
        Ok(())
    }

    /// Linear warm-up to `lr` over the first `warmup_ratio` of training,
    /// then linear decay to zero at `max_steps`. `step` is 0-based.
    pub fn lr_at(&self, step: usize) -> f64 {
        let total = self.max_steps as f64;
        let warm = (self.warmup_ratio * total).ceil().max(1.0);
        let s = step as f64 + 1.0;
        if s <= warm {
            self.lr * s / warm
        } else {
            self.lr * ((total - s + 1.0) / (total - warm + 1.0)).max(0.0)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_pointwise() {
        let c = TrainConfig {
            lr: 1.0,
            max_steps: 100,
            warmup_ratio: 0.1,
            ..Default::default()
        };
        assert!((c.lr_at(0) - 0.1).abs() < 1e-12);
        assert!((c.lr_at(4) - 0.5).abs() < 1e-12);
        assert!((c.lr_at(9) - 1.0).abs() < 1e-12);
        // decays linearly after the peak
        assert!((c.lr_at(10) - 90.0 / 91.0).abs() < 1e-12);
        assert!((c.lr_at(99) - 1.0 / 91.0).abs() < 1e-12);
        let peak = (0..100).map(|s| c.lr_at(s)).fold(0.0, f64::max);
        assert_eq!(peak, c.lr_at(9));
        for s in 10..99 {
            assert!(c.lr_at(s + 1) < c.lr_at(s));
        }
    }

    #[test]
    fn rejects_bad_values() {
        let mut c = TrainConfig::default();
        c.patience = 0;
        assert!(c.validate().is_err());
        let mut c = TrainConfig::default();
        c.lr = 0.0;
        assert!(c.validate().is_err());
        assert!(TrainConfig::default().validate().is_ok());
    }
}
