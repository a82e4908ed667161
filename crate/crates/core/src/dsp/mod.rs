//! Deterministic signal-processing kernels.
//!
//! Everything here is a pure function over [`Waveform`]s and dense
//! row-major matrices. The frame grid is the 10 ms hop (160 samples at
//! 16 kHz) shared with the encoder stem, so hand-crafted feature targets
//! line up frame for frame with the learned representation.

mod mel;
mod sisdr;
mod spectrum;

pub use mel::{dct_matrix, hz_to_mel, mel_filterbank, mel_to_hz, mfcc, mfcc_from_power};
pub use sisdr::{si_sdr, si_sdr_with_scale, SiSdr};
pub use spectrum::{
    banded_log_power_spectrum, dft_power_naive, frame_centered, frame_signal, hann_window,
    log_power_spectrum, power_spectrum,
};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_SAMPLE_RATE: u32 = 16_000;
/// Floor added to power before taking the log.
pub const EPS_LOG: f64 = 1e-10;
/// Floor on the SI-SDR distortion energy.
pub const EPS_SDR: f64 = 1e-12;
/// SI-SDR is clamped to `[-SDR_CLAMP_DB, SDR_CLAMP_DB]`.
pub const SDR_CLAMP_DB: f64 = 100.0;

/// Hop of the shared 10 ms frame grid at 16 kHz.
pub const HOP: usize = 160;
pub const SHORT_FRAME_LEN: usize = 400;
pub const LONG_FRAME_LEN: usize = 6400;
pub const SHORT_FFT: usize = 512;
pub const LONG_FFT: usize = 8192;
pub const N_MELS: usize = 40;
pub const N_CEPS: usize = 13;

/// Mono PCM audio.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::InvalidArgument("sample rate must be positive".into()));
        }
        if samples.is_empty() {
            return Err(Error::InvalidArgument("waveform must be non-empty".into()));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::InvalidArgument(format!("non-finite sample at {i}")));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    /// 16 kHz waveform.
    pub fn from_samples(samples: Vec<f64>) -> Result<Self> {
        Self::new(samples, DEFAULT_SAMPLE_RATE)
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn rms(&self) -> f64 {
        (self.samples.iter().map(|s| s * s).sum::<f64>() / self.samples.len() as f64).sqrt()
    }
}

/// Windowed frames, row-major `[n_frames × frame_len]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameGrid {
    pub frames: Vec<f64>,
    pub n_frames: usize,
    pub frame_len: usize,
    pub hop: usize,
    pub sample_rate: u32,
}

impl FrameGrid {
    pub fn row(&self, i: usize) -> &[f64] {
        &self.frames[i * self.frame_len..(i + 1) * self.frame_len]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FeatureKind {
    Lps,
    Mfcc,
}

/// Per-frame feature values, row-major `[n_frames × n_dims]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub values: Vec<f64>,
    pub n_frames: usize,
    pub n_dims: usize,
    pub kind: FeatureKind,
    pub context_ms: u32,
}

impl FeatureMatrix {
    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.n_dims..(i + 1) * self.n_dims]
    }

    /// Rows `[start, end)` as a new matrix.
    pub fn rows(&self, start: usize, end: usize) -> FeatureMatrix {
        FeatureMatrix {
            values: self.values[start * self.n_dims..end * self.n_dims].to_vec(),
            n_frames: end - start,
            n_dims: self.n_dims,
            kind: self.kind,
            context_ms: self.context_ms,
        }
    }
}

/// The four frame-level regression targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TargetKind {
    #[serde(rename = "LPS-25")]
    Lps25,
    #[serde(rename = "LPS-400")]
    Lps400,
    #[serde(rename = "MFCC-25")]
    Mfcc25,
    #[serde(rename = "MFCC-400")]
    Mfcc400,
}

impl TargetKind {
    pub const ALL: [TargetKind; 4] = [
        TargetKind::Lps25,
        TargetKind::Lps400,
        TargetKind::Mfcc25,
        TargetKind::Mfcc400,
    ];

    pub fn feature(self) -> FeatureKind {
        match self {
            TargetKind::Lps25 | TargetKind::Lps400 => FeatureKind::Lps,
            TargetKind::Mfcc25 | TargetKind::Mfcc400 => FeatureKind::Mfcc,
        }
    }

    pub fn context_ms(self) -> u32 {
        match self {
            TargetKind::Lps25 | TargetKind::Mfcc25 => 25,
            TargetKind::Lps400 | TargetKind::Mfcc400 => 400,
        }
    }

    pub fn frame_len(self) -> usize {
        match self.context_ms() {
            25 => SHORT_FRAME_LEN,
            _ => LONG_FRAME_LEN,
        }
    }

    /// Output width. The 400 ms spectrum is pooled into the same 257 bands
    /// as the 25 ms one.
    pub fn dim(self) -> usize {
        match self.feature() {
            FeatureKind::Lps => SHORT_FFT / 2 + 1,
            FeatureKind::Mfcc => N_CEPS,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            TargetKind::Lps25 => "LPS-25",
            TargetKind::Lps400 => "LPS-400",
            TargetKind::Mfcc25 => "MFCC-25",
            TargetKind::Mfcc400 => "MFCC-400",
        }
    }

    /// Computes this target on the centred 10 ms grid: exactly
    /// `wave.len() / HOP` rows.
    pub fn extract(self, wave: &Waveform) -> Result<FeatureMatrix> {
        let grid = frame_centered(wave, self.frame_len(), HOP)?;
        match self {
            TargetKind::Lps25 => log_power_spectrum(&grid, SHORT_FFT),
            TargetKind::Lps400 => banded_log_power_spectrum(&grid, LONG_FFT, self.dim()),
            TargetKind::Mfcc25 => mfcc(&grid, N_MELS, N_CEPS),
            TargetKind::Mfcc400 => mfcc(&grid, N_MELS, N_CEPS),
        }
    }
}

impl fmt::Display for TargetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TargetKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        TargetKind::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::UnknownKind(s.to_string()))
    }
}
