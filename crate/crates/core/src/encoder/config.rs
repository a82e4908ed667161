use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Network dimensions. The stem constants (320/160/80) give one frame per
/// 10 ms at 16 kHz and are kept verbatim at every scale.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderConfig {
    pub stem_kernel: usize,
    pub stem_stride: usize,
    pub stem_pad: usize,
    pub stem_channels: usize,
    pub d_model: usize,
    pub d_ff: usize,
    pub heads: usize,
    pub encoder_blocks: usize,
    pub decoder_blocks: usize,
    /// Width of the sentence projection `z`.
    pub proj_dim: usize,
    /// L2-normalise `z` before the sentence loss.
    pub normalize_projection: bool,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl EncoderConfig {
    pub fn desk() -> Self {
        Self::scaled(64, 64, 4, 2, 2)
    }

    pub fn paper() -> Self {
        Self::scaled(512, 768, 12, 6, 4)
    }

    /// Smallest useful model: gradient checks and smoke tests.
    pub fn tiny() -> Self {
        Self::scaled(8, 16, 2, 1, 1)
    }

    pub fn scaled(
        stem_channels: usize,
        d_model: usize,
        heads: usize,
        encoder_blocks: usize,
        decoder_blocks: usize,
    ) -> Self {
        Self {
            stem_kernel: 320,
            stem_stride: 160,
            stem_pad: 80,
            stem_channels,
            d_model,
            d_ff: 4 * d_model,
            heads,
            encoder_blocks,
            decoder_blocks,
            proj_dim: d_model,
            normalize_projection: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            self.stem_kernel,
            self.stem_stride,
            self.stem_channels,
            self.d_model,
            self.d_ff,
            self.heads,
            self.encoder_blocks,
            self.decoder_blocks,
            self.proj_dim,
        ];
        if counts.contains(&0) {
            return Err(Error::Config("encoder sizes must be >= 1".into()));
        }
        if !self.d_model.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "d_model {} not divisible by heads {}",
                self.d_model, self.heads
            )));
        }
        if self.stem_kernel < self.stem_stride || 2 * self.stem_pad >= self.stem_kernel {
            return Err(Error::Config("inconsistent stem geometry".into()));
        }
        Ok(())
    }

    /// Frames produced for `len` input samples.
    pub fn frames_for(&self, len: usize) -> Option<usize> {
        (len + 2 * self.stem_pad)
            .checked_sub(self.stem_kernel)
            .map(|n| n / self.stem_stride + 1)
    }

    /// Samples reconstructed from `frames` frames by the decoder.
    pub fn samples_for(&self, frames: usize) -> usize {
        (frames - 1) * self.stem_stride + self.stem_kernel - 2 * self.stem_pad
    }
}
