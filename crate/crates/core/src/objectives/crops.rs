use rand::Rng;

use crate::corpus::{noise_sample, NoiseBank};
use crate::dsp::{Waveform, HOP};
use crate::error::Result;
use crate::seeds::{derive_seed, rng_for};

/// 2 s at 16 kHz.
pub const CROP_SAMPLES: usize = 32_000;
/// Temporal-mask length range for augmentation, in samples (100–200 ms).
pub const AUG_MASK_SAMPLES: (usize, usize) = (1_600, 3_200);
/// Additive-noise SNR range for augmentation, in dB.
pub const AUG_SNR_DB: (f64, f64) = (5.0, 20.0);

const STREAM_CROP: u64 = 0x6372_6f70;
const STREAM_AUG: u64 = 0x6175_676d;

/// Two crops of one utterance and where they start.
#[derive(Debug, Clone, PartialEq)]
pub struct CropPair {
    pub a: Waveform,
    pub b: Waveform,
    pub offset_a: usize,
    pub offset_b: usize,
    /// The utterance was shorter than the crop and was cyclically extended.
    pub padded: bool,
}

/// Cyclic extension of `wave` to at least `len` samples.
pub fn cyclic_pad(wave: &Waveform, len: usize) -> Waveform {
    if wave.len() >= len {
        return wave.clone();
    }
    let s = wave.samples();
    let out = (0..len).map(|i| s[i % s.len()]).collect();
    Waveform::new(out, wave.sample_rate()).expect("padding keeps samples finite")
}

/// Two independent uniform crops of `crop_len` samples. Start offsets are
/// drawn on the 160-sample frame grid so crops stay aligned with
/// utterance-level feature frames.
pub fn sample_crops(wave: &Waveform, crop_len: usize, seed: u64) -> CropPair {
    let padded = wave.len() < crop_len;
    if padded {
        log::warn!(
            "utterance of {} samples cyclically padded to {crop_len}",
            wave.len()
        );
    }
    let source = cyclic_pad(wave, crop_len);
    let slots = (source.len() - crop_len) / HOP + 1;
    let mut rng = rng_for(seed, STREAM_CROP, 0);
    let offset_a = rng.gen_range(0..slots) * HOP;
    let offset_b = rng.gen_range(0..slots) * HOP;
    let cut = |o: usize| {
        Waveform::new(source.samples()[o..o + crop_len].to_vec(), source.sample_rate())
            .expect("slice of a valid waveform")
    };
    CropPair {
        a: cut(offset_a),
        b: cut(offset_b),
        offset_a,
        offset_b,
        padded,
    }
}

/// Concrete augmentation parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentParams {
    pub mask_start: usize,
    pub mask_len: usize,
    /// `None` disables additive noise.
    pub snr_db: Option<f64>,
    pub noise_seed: u64,
}

/// Draws a 100–200 ms temporal mask and a 5–20 dB SNR.
pub fn draw_augment(crop_len: usize, seed: u64) -> AugmentParams {
    let mut rng = rng_for(seed, STREAM_AUG, 0);
    let mask_len = rng
        .gen_range(AUG_MASK_SAMPLES.0..=AUG_MASK_SAMPLES.1)
        .min(crop_len);
    let mask_start = rng.gen_range(0..=crop_len - mask_len);
    let snr_db = rng.gen_range(AUG_SNR_DB.0..=AUG_SNR_DB.1);
    AugmentParams {
        mask_start,
        mask_len,
        snr_db: Some(snr_db),
        noise_seed: derive_seed(seed, STREAM_AUG, 1),
    }
}

/// Temporal mask, then additive noise scaled to the requested SNR against
/// the masked signal.
pub fn augment_with(crop: &Waveform, bank: &NoiseBank, p: &AugmentParams) -> Result<Waveform> {
    let mut samples = crop.samples().to_vec();
    let end = (p.mask_start + p.mask_len).min(samples.len());
    samples[p.mask_start.min(end)..end]
        .iter_mut()
        .for_each(|x| *x = 0.0);
    if let Some(snr) = p.snr_db.filter(|s| s.is_finite()) {
        let signal: f64 = samples.iter().map(|x| x * x).sum();
        let noise = noise_sample(bank, samples.len(), p.noise_seed)?;
        let noise_energy: f64 = noise.samples().iter().map(|x| x * x).sum();
        if signal > 0.0 && noise_energy > 0.0 {
            let gain = (signal / (noise_energy * 10f64.powf(snr / 10.0))).sqrt();
            for (x, n) in samples.iter_mut().zip(noise.samples()) {
                *x += gain * n;
            }
        }
    }
    Waveform::new(samples, crop.sample_rate())
}

/// [`augment_with`] using parameters drawn from `seed`.
pub fn augment(crop: &Waveform, bank: &NoiseBank, seed: u64) -> Result<(Waveform, AugmentParams)> {
    let p = draw_augment(crop.len(), seed);
    Ok((augment_with(crop, bank, &p)?, p))
}
