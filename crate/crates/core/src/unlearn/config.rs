use serde::{Deserialize, Serialize};

use super::saliency::GammaPolicy;
use crate::error::{Error, Result};
use crate::model::OptimizerKind;
use crate::objectives::{GradDiffWeights, SsuWeights, DEFAULT_NPO_BETA};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum LrSchedule {
    #[default]
    Constant,
    /// Base lr for the first `switch_after` steps, `later_lr` afterwards.
    TwoPhase { switch_after: usize, later_lr: f64 },
}

impl LrSchedule {
    pub fn lr_for(&self, base: f64, t: usize) -> f64 {
        match *self {
            LrSchedule::Constant => base,
            LrSchedule::TwoPhase {
                switch_after,
                later_lr,
            } => {
                if t <= switch_after {
                    base
                } else {
                    later_lr
                }
            }
        }
    }
}

/// When the saliency mask is recomputed during the fine-tuning stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MaskMode {
    /// At every gradient step.
    #[default]
    PerStep,
    /// Once, from the first step's gradient, then held for the whole time step.
    Frozen,
}

/// Which model the gradient-difference KL term is anchored to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum KlAnchor {
    /// The model entering the current time step.
    #[default]
    Previous,
    /// The vanilla model before any unlearning.
    Original,
}

fn default_epochs() -> usize {
    1
}
fn default_batch() -> usize {
    2
}
fn default_k() -> usize {
    1
}
fn default_beta() -> f64 {
    DEFAULT_NPO_BETA
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UnlearnConfig {
    /// Registry name of the algorithm (`ssu`, `tv`, `ga`, `grad_diff`, `npo`, `none`).
    pub algorithm: String,
    pub lr: f64,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default)]
    pub ssu_weights: SsuWeights,
    #[serde(default)]
    pub graddiff_weights: GradDiffWeights,
    #[serde(default = "default_beta")]
    pub npo_beta: f64,
    #[serde(default)]
    pub gamma_policy: GammaPolicy,
    #[serde(default = "default_k")]
    pub k_random: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub optimizer: OptimizerKind,
    #[serde(default)]
    pub lr_schedule: LrSchedule,
    #[serde(default)]
    pub mask_mode: MaskMode,
    #[serde(default)]
    pub kl_anchor: KlAnchor,
    /// Abort a step when |loss| exceeds 10× its initial magnitude.
    #[serde(default)]
    pub divergence_guard: bool,
    /// Epochs used to fine-tune the NPO reference model on D_f ∪ D_nor.
    #[serde(default = "default_epochs")]
    pub npo_reference_epochs: usize,
}

impl UnlearnConfig {
    pub fn new(algorithm: &str, lr: f64) -> Self {
        Self {
            algorithm: algorithm.to_string(),
            lr,
            epochs: default_epochs(),
            batch_size: default_batch(),
            ssu_weights: SsuWeights::default(),
            graddiff_weights: GradDiffWeights::default(),
            npo_beta: DEFAULT_NPO_BETA,
            gamma_policy: GammaPolicy::MeanPlusStd,
            k_random: default_k(),
            seed: 0,
            optimizer: OptimizerKind::Sgd,
            lr_schedule: LrSchedule::Constant,
            mask_mode: MaskMode::PerStep,
            kl_anchor: KlAnchor::Previous,
            divergence_guard: false,
            npo_reference_epochs: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let field = |f: &str, m: &str| Err(Error::config(format!("unlearn.{f}"), m));
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return field("lr", "must be a positive finite number");
        }
        if self.epochs < 1 {
            return field("epochs", "must be >= 1");
        }
        if self.batch_size < 1 {
            return field("batch_size", "must be >= 1");
        }
        if self.k_random < 1 {
            return field("k_random", "must be >= 1");
        }
        if !(self.npo_beta > 0.0) {
            return field("npo_beta", "must be > 0");
        }
        if let GammaPolicy::Absolute(g) = self.gamma_policy {
            if !(g >= 0.0) {
                return field("gamma_policy", "absolute gamma must be >= 0");
            }
        }
        if let LrSchedule::TwoPhase { later_lr, .. } = self.lr_schedule {
            if !(later_lr > 0.0) {
                return field("lr_schedule", "later_lr must be > 0");
            }
        }
        self.ssu_weights
            .validate()
            .map_err(|e| Error::config("unlearn.ssu_weights", e.to_string()))?;
        self.graddiff_weights
            .validate()
            .map_err(|e| Error::config("unlearn.graddiff_weights", e.to_string()))?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_phase_schedule() {
        let s = LrSchedule::TwoPhase {
            switch_after: 5,
            later_lr: 1e-6,
        };
        assert_eq!(s.lr_for(1e-5, 5), 1e-5);
        assert_eq!(s.lr_for(1e-5, 6), 1e-6);
        assert_eq!(LrSchedule::Constant.lr_for(0.3, 99), 0.3);
    }

    #[test]
    fn parses_with_defaults() {
        let c: UnlearnConfig = serde_json::from_str(r#"{"algorithm":"ssu","lr":0.01}"#).unwrap();
        assert_eq!(c.epochs, 1);
        assert_eq!(c.batch_size, 2);
        assert_eq!(c.ssu_weights, SsuWeights { eps1: 1.0, eps2: 0.5 });
        assert_eq!(c.npo_beta, 0.4);
        assert_eq!(c.gamma_policy, GammaPolicy::MeanPlusStd);
        let c: UnlearnConfig =
            serde_json::from_str(r#"{"algorithm":"ssu","lr":0.01,"gamma_policy":{"absolute":0.2}}"#).unwrap();
        assert_eq!(c.gamma_policy, GammaPolicy::Absolute(0.2));
        assert!(serde_json::from_str::<UnlearnConfig>(r#"{"algorithm":"ssu","lr":0.01,"lrr":1}"#).is_err());
    }

    #[test]
    fn validation_names_field() {
        let mut c = UnlearnConfig::new("ssu", 0.1);
        c.batch_size = 0;
        match c.validate() {
            Err(Error::Config { field, .. }) => assert_eq!(field, "unlearn.batch_size"),
            other => panic!("{other:?}"),
        }
    }
}
