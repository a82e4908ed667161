use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::read_wav;
use crate::dsp::{Waveform, DEFAULT_SAMPLE_RATE};
use crate::error::{Error, Result};

/// -20 dB relative to full scale.
pub const SYNTHETIC_NOISE_RMS: f64 = 0.1;

/// Source of non-speech noise for masking and augmentation.
#[derive(Debug, Clone, Default, PartialEq)]
pub enum NoiseBank {
    /// Seeded white Gaussian noise at [`SYNTHETIC_NOISE_RMS`].
    #[default]
    Synthetic,
    Clips(Vec<Waveform>),
}

impl NoiseBank {
    /// Every `.wav` file directly under `dir`, sorted by file name.
    pub fn from_dir(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let mut paths: Vec<_> = fs::read_dir(dir)
            .map_err(|e| Error::io(dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("wav")))
            .collect();
        paths.sort();
        let clips = paths.iter().map(read_wav).collect::<Result<Vec<_>>>()?;
        Ok(NoiseBank::Clips(clips))
    }
}

/// `length` samples of noise: a uniformly chosen clip read from a uniform
/// offset, wrapping cyclically when the clip is shorter than requested.
pub fn noise_sample(bank: &NoiseBank, length: usize, seed: u64) -> Result<Waveform> {
    if length == 0 {
        return Err(Error::InvalidArgument("noise length must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples = match bank {
        NoiseBank::Synthetic => (0..length)
            .map(|_| SYNTHETIC_NOISE_RMS * rng.sample::<f64, _>(StandardNormal))
            .collect(),
        NoiseBank::Clips(clips) => {
            if clips.is_empty() {
                return Err(Error::NoNoise);
            }
            let clip = clips[rng.gen_range(0..clips.len())].samples();
            let offset = rng.gen_range(0..clip.len());
            (0..length)
                .map(|i| clip[(offset + i) % clip.len()])
                .collect()
        }
    };
    Waveform::new(samples, DEFAULT_SAMPLE_RATE)
}
