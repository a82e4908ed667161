//! Multi-granularity objectives, mask planning, cropping and augmentation.

mod crops;
mod losses;
mod masking;

use serde::{Deserialize, Serialize};

pub use crops::{
    augment, augment_with, cyclic_pad, draw_augment, sample_crops, AugmentParams, CropPair,
    AUG_MASK_SAMPLES, AUG_SNR_DB, CROP_SAMPLES,
};
pub use losses::{
    loss_frame, loss_frame_tape, loss_phoneme, loss_phoneme_generative,
    loss_phoneme_generative_tape, loss_phoneme_tape, loss_sample, loss_sample_tape, loss_sentence,
    loss_sentence_tape, ContrastiveBatch, FrameTerm, SentenceBatch,
};
pub use masking::{
    apply_masks, plan_masks, plan_masks_with, MaskFill, MaskPlan, MaskSpec, MASK_BUDGET, MAX_PLACEMENT_FAILURES,
    SEGMENT_FRAMES,
};

use crate::dsp::TargetKind;
use crate::error::{Error, Result};

/// Values each λ takes in the weight tuning grid.
pub const LAMBDA_GRID: [f64; 4] = [0.03, 0.1, 0.3, 1.0];

/// λ₁..λ₄ for the sample, frame, phoneme and sentence losses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub sample: f64,
    pub frame: f64,
    pub phoneme: f64,
    pub sentence: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            sample: 1.0,
            frame: 1.0,
            phoneme: 1.0,
            sentence: 1.0,
        }
    }
}

impl LossWeights {
    pub fn as_array(&self) -> [f64; 4] {
        [self.sample, self.frame, self.phoneme, self.sentence]
    }

    pub fn validate(&self) -> Result<()> {
        let w = self.as_array();
        if w.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
            return Err(Error::Config(format!("loss weights must be >= 0: {w:?}")));
        }
        if w.iter().all(|&x| x == 0.0) {
            return Err(Error::Config("at least one loss weight must be > 0".into()));
        }
        Ok(())
    }

    /// Every combination of [`LAMBDA_GRID`] values, sample weight varying
    /// slowest.
    pub fn tuning_grid() -> Vec<Self> {
        let mut out = Vec::with_capacity(LAMBDA_GRID.len().pow(4));
        for &sample in &LAMBDA_GRID {
            for &frame in &LAMBDA_GRID {
                for &phoneme in &LAMBDA_GRID {
                    for &sentence in &LAMBDA_GRID {
                        out.push(Self {
                            sample,
                            frame,
                            phoneme,
                            sentence,
                        });
                    }
                }
            }
        }
        out
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            sample: self.sample * c,
            frame: self.frame * c,
            phoneme: self.phoneme * c,
            sentence: self.sentence * c,
        }
    }
}

/// How phoneme-level vectors are compared.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhonemeSimilarity {
    /// L2-normalise anchors, positives and negatives first.
    #[default]
    Cosine,
    Dot,
}

/// Objective hyper-parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectiveConfig {
    pub tau_phoneme: f64,
    pub tau_sentence: f64,
    pub negatives: usize,
    pub phoneme_similarity: PhonemeSimilarity,
    pub frame_kinds: Vec<TargetKind>,
    /// ω per entry of `frame_kinds`.
    pub frame_weights: Vec<f64>,
    pub mask_fill: MaskFill,
    #[serde(default)]
    pub mask: MaskSpec,
    pub crop_samples: usize,
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        Self {
            tau_phoneme: 0.1,
            tau_sentence: 0.1,
            negatives: 32,
            phoneme_similarity: PhonemeSimilarity::Cosine,
            frame_kinds: TargetKind::ALL.to_vec(),
            frame_weights: vec![1.0; 4],
            mask_fill: MaskFill::Noise,
            mask: MaskSpec::default(),
            crop_samples: CROP_SAMPLES,
        }
    }
}

impl ObjectiveConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau_phoneme > 0.0 && self.tau_sentence > 0.0) {
            return Err(Error::Config("temperatures must be > 0".into()));
        }
        if self.negatives == 0 {
            return Err(Error::Config("negatives must be >= 1".into()));
        }
        if self.frame_kinds.len() != self.frame_weights.len() {
            return Err(Error::Config(
                "frame_weights must have one entry per frame kind".into(),
            ));
        }
        if self.frame_weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::Config("frame weights must be >= 0".into()));
        }
        self.mask.validate()?;
        let hop = crate::dsp::HOP;
        if self.crop_samples < self.mask.segment_frames * hop || !self.crop_samples.is_multiple_of(hop) {
            return Err(Error::Config(
                "crop_samples must be a multiple of 160 covering at least one mask segment".into(),
            ));
        }
        Ok(())
    }
}

/// Component losses before weighting.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossParts {
    pub sample: f64,
    pub frame: f64,
    pub phoneme: f64,
    pub sentence: f64,
}

/// Component and weighted total losses of one step, with diagnostics.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct LossReport {
    pub l_sample: f64,
    pub l_frame: f64,
    pub l_phoneme: f64,
    pub l_sentence: f64,
    pub l_total: f64,
    /// SI-SDR scale per reconstructed crop.
    pub alpha: Vec<f64>,
    /// Weighted frame-loss share per kind.
    pub frame_terms: Vec<(TargetKind, f64)>,
}

/// `L = λ₁L_sample + λ₂L_frame + λ₃L_phoneme + λ₄L_sentence`.
pub fn total_loss(parts: LossParts, weights: &LossWeights) -> Result<LossReport> {
    for (name, v) in [
        ("sample", parts.sample),
        ("frame", parts.frame),
        ("phoneme", parts.phoneme),
        ("sentence", parts.sentence),
    ] {
        if !v.is_finite() {
            return Err(Error::NonFiniteLoss(name));
        }
    }
    Ok(LossReport {
        l_sample: parts.sample,
        l_frame: parts.frame,
        l_phoneme: parts.phoneme,
        l_sentence: parts.sentence,
        l_total: weights.sample * parts.sample
            + weights.frame * parts.frame
            + weights.phoneme * parts.phoneme
            + weights.sentence * parts.sentence,
        alpha: Vec::new(),
        frame_terms: Vec::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const PARTS: LossParts = LossParts {
        sample: -10.0,
        frame: 2.0,
        phoneme: 3.0,
        sentence: 1.0,
    };

    #[test]
    fn tuning_grid_covers_every_combination() {
        let grid = LossWeights::tuning_grid();
        assert_eq!(grid.len(), 256);
        assert_eq!(grid[0].as_array(), [0.03; 4]);
        assert_eq!(grid[255], LossWeights::default());
        assert!(grid.iter().all(|w| w.validate().is_ok()));
        let mut seen: Vec<[u64; 4]> = grid.iter().map(|w| w.as_array().map(f64::to_bits)).collect();
        seen.sort_unstable();
        seen.dedup();
        assert_eq!(seen.len(), 256);
    }

    #[test]
    fn weighting() {
        assert_eq!(total_loss(PARTS, &LossWeights::default()).unwrap().l_total, -4.0);
        let only_sample = LossWeights {
            sample: 1.0,
            frame: 0.0,
            phoneme: 0.0,
            sentence: 0.0,
        };
        assert_eq!(total_loss(PARTS, &only_sample).unwrap().l_total, -10.0);
        let w = LossWeights {
            sample: 0.3,
            frame: 0.1,
            phoneme: 1.0,
            sentence: 0.03,
        };
        let base = total_loss(PARTS, &w).unwrap().l_total;
        let scaled = total_loss(PARTS, &w.scaled(2.5)).unwrap().l_total;
        assert!((scaled - 2.5 * base).abs() < 1e-12);
    }

    #[test]
    fn non_finite_component_is_named() {
        let bad = LossParts {
            phoneme: f64::NAN,
            ..PARTS
        };
        assert!(matches!(
            total_loss(bad, &LossWeights::default()),
            Err(Error::NonFiniteLoss("phoneme"))
        ));
    }

    #[test]
    fn weight_validation() {
        assert!(LossWeights::default().validate().is_ok());
        assert!(LossWeights::default().scaled(0.0).validate().is_err());
        let neg = LossWeights {
            frame: -1.0,
            ..LossWeights::default()
        };
        assert!(neg.validate().is_err());
        ObjectiveConfig::default().validate().unwrap();
    }
}
