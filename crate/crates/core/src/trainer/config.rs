use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::objectives::{LossWeights, ObjectiveConfig};

/// Switches that disable objectives or swap the phoneme loss for its
/// generative L1 form.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Ablation {
    pub drop_sample: bool,
    pub drop_frame: bool,
    pub drop_phoneme: bool,
    pub drop_sentence: bool,
    pub generative_phoneme: bool,
}

impl Ablation {
    /// The six variants of the ablation study, full model first.
    pub fn variants() -> [(&'static str, Ablation); 6] {
        let none = Ablation::default();
        [
            ("full", none),
            ("drop_sample", Ablation { drop_sample: true, ..none }),
            ("drop_frame", Ablation { drop_frame: true, ..none }),
            ("drop_phoneme", Ablation { drop_phoneme: true, ..none }),
            ("drop_sentence", Ablation { drop_sentence: true, ..none }),
            ("generative_phoneme", Ablation { generative_phoneme: true, ..none }),
        ]
    }

    pub fn by_name(name: &str) -> Option<Ablation> {
        Self::variants()
            .into_iter()
            .find(|(n, _)| *n == name)
            .map(|(_, a)| a)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub base_lr: f64,
    pub warmup_steps: u64,
    pub decay_exponent: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub clip_norm: f64,
    pub weights: LossWeights,
    pub ablation: Ablation,
    pub objective: ObjectiveConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl TrainConfig {
    pub fn desk() -> Self {
        Self {
            base_lr: 1e-3,
            warmup_steps: 500,
            decay_exponent: 0.3,
            batch_size: 8,
            epochs: 50,
            seed: 0,
            clip_norm: 5.0,
            weights: LossWeights::default(),
            ablation: Ablation::default(),
            objective: ObjectiveConfig::default(),
        }
    }

    pub fn paper() -> Self {
        Self {
            warmup_steps: 10_000,
            batch_size: 120,
            epochs: 300,
            ..Self::desk()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.warmup_steps < 1 {
            return Err(Error::Config("warmup_steps must be >= 1".into()));
        }
        if self.batch_size < 2 {
            return Err(Error::Config("batch_size must be >= 2".into()));
        }
        if !(self.base_lr > 0.0 && self.clip_norm > 0.0) {
            return Err(Error::Config("base_lr and clip_norm must be > 0".into()));
        }
        self.weights.validate()?;
        self.objective.validate()?;
        self.effective_weights().validate().map_err(|_| {
            Error::Config("ablation flags disable every weighted objective".into())
        })
    }

    /// λ with dropped objectives set to zero.
    pub fn effective_weights(&self) -> LossWeights {
        let a = &self.ablation;
        let keep = |drop: bool, w: f64| if drop { 0.0 } else { w };
        LossWeights {
            sample: keep(a.drop_sample, self.weights.sample),
            frame: keep(a.drop_frame, self.weights.frame),
            phoneme: keep(a.drop_phoneme, self.weights.phoneme),
            sentence: keep(a.drop_sentence, self.weights.sentence),
        }
    }
}

/// Linear warmup to `base_lr`, then `base_lr · (step / warmup)^(−decay)`.
pub fn lr_schedule(step: u64, cfg: &TrainConfig) -> f64 {
    let step = step.max(1) as f64;
    let warmup = cfg.warmup_steps as f64;
    if step <= warmup {
        cfg.base_lr * step / warmup
    } else {
        cfg.base_lr * (step / warmup).powf(-cfg.decay_exponent)
    }
}
