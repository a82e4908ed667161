//! Synthetic labelled speech-like corpus.
//!
//! Each utterance is a chain of "phone" segments of 50–300 ms. A class is a
//! fixed triple of formant frequencies rendered as three sinusoids; a
//! speaker multiplies every frequency by a fixed pitch factor and reweights
//! the formants with a fixed spectral tilt. Frame labels are exact.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{frame_count, Corpus, Utterance};
use crate::dsp::{Waveform, DEFAULT_SAMPLE_RATE, HOP};
use crate::error::{Error, Result};

const CLASS_SEED: u64 = 0x4d47_4631;
const MIN_SEGMENT_MS: f64 = 50.0;
const MAX_SEGMENT_MS: f64 = 300.0;
const FADE_SAMPLES: usize = 80;
const FLOOR_NOISE_STD: f64 = 0.003;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub class_count: usize,
    pub speaker_count: usize,
    pub utterances_per_speaker: usize,
    pub utterance_seconds: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            class_count: 8,
            speaker_count: 8,
            utterances_per_speaker: 8,
            utterance_seconds: 3.0,
            seed: 0,
        }
    }
}

impl SynthSpec {
    fn validate(&self) -> Result<()> {
        if self.class_count == 0 || self.speaker_count == 0 || self.utterances_per_speaker == 0 {
            return Err(Error::InvalidArgument("synth counts must be >= 1".into()));
        }
        if !(self.utterance_seconds.is_finite() && self.utterance_seconds >= 0.02) {
            return Err(Error::InvalidArgument(format!(
                "utterance_seconds {} too short",
                self.utterance_seconds
            )));
        }
        Ok(())
    }
}

/// Formant triple (Hz) of class `c`. Independent of the corpus seed, so a
/// class means the same sound in every generated corpus.
pub fn class_formants(c: usize) -> [f64; 3] {
    let mut rng = ChaCha8Rng::seed_from_u64(CLASS_SEED ^ (c as u64).wrapping_mul(0x9e37_79b9));
    [
        rng.gen_range(250.0..850.0),
        rng.gen_range(900.0..2300.0),
        rng.gen_range(2500.0..3800.0),
    ]
}

struct Voice {
    pitch: f64,
    tilt: f64,
}

fn speaker_voice(seed: u64, s: usize) -> Voice {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5350_4b52 ^ ((s as u64) << 20));
    Voice {
        pitch: rng.gen_range(0.85..1.18),
        tilt: rng.gen_range(-1.5..0.5),
    }
}

fn render_segment(
    out: &mut Vec<f64>,
    len: usize,
    formants: [f64; 3],
    voice: &Voice,
    gain: f64,
    rng: &mut ChaCha8Rng,
) {
    let sr = DEFAULT_SAMPLE_RATE as f64;
    let amps: Vec<f64> = formants
        .iter()
        .map(|f| (f * voice.pitch / 1000.0).powf(voice.tilt))
        .collect();
    let norm: f64 = amps.iter().sum();
    let phases: Vec<f64> = (0..3)
        .map(|_| rng.gen_range(0.0..std::f64::consts::TAU))
        .collect();
    for t in 0..len {
        let time = t as f64 / sr;
        let mut s = 0.0;
        for k in 0..3 {
            s += amps[k]
                * (std::f64::consts::TAU * formants[k] * voice.pitch * time + phases[k]).sin();
        }
        let edge = t.min(len - 1 - t);
        let fade = if edge < FADE_SAMPLES {
            0.5 - 0.5 * (std::f64::consts::PI * edge as f64 / FADE_SAMPLES as f64).cos()
        } else {
            1.0
        };
        out.push(gain * fade * s / norm);
    }
}

/// Generates the corpus described by `spec`; fully determined by the seed.
pub fn synth_corpus(spec: &SynthSpec) -> Result<Corpus> {
    spec.validate()?;
    let sr = DEFAULT_SAMPLE_RATE as f64;
    let len = ((spec.utterance_seconds * sr / HOP as f64).round() as usize).max(1) * HOP;
    let classes: Vec<[f64; 3]> = (0..spec.class_count).map(class_formants).collect();
    let mut utterances = Vec::with_capacity(spec.speaker_count * spec.utterances_per_speaker);
    for s in 0..spec.speaker_count {
        let voice = speaker_voice(spec.seed, s);
        for u in 0..spec.utterances_per_speaker {
            let mut rng =
                ChaCha8Rng::seed_from_u64(spec.seed.wrapping_mul(1_000_003) ^ ((s * 4096 + u) as u64));
            let gain = rng.gen_range(0.35..0.6);
            let mut samples = Vec::with_capacity(len);
            // class id of every sample, resolved to frames below
            let mut owner = Vec::with_capacity(len);
            let mut prev = usize::MAX;
            while samples.len() < len {
                let ms = rng.gen_range(MIN_SEGMENT_MS..=MAX_SEGMENT_MS);
                let seg = ((ms * sr / 1000.0) as usize).min(len - samples.len());
                let mut class = rng.gen_range(0..spec.class_count);
                if spec.class_count > 1 && class == prev {
                    class = (class + 1 + rng.gen_range(0..spec.class_count - 1)) % spec.class_count;
                }
                prev = class;
                render_segment(&mut samples, seg, classes[class], &voice, gain, &mut rng);
                owner.extend(std::iter::repeat_n(class, seg));
            }
            for x in samples.iter_mut() {
                *x += FLOOR_NOISE_STD * rng.sample::<f64, _>(StandardNormal);
            }
            let frame_labels = (0..frame_count(len))
                .map(|f| majority(&owner[f * HOP..(f + 1) * HOP], spec.class_count))
                .collect();
            utterances.push(Utterance {
                id: format!("spk{s:03}_utt{u:03}"),
                wave: Waveform::new(samples, DEFAULT_SAMPLE_RATE)?,
                speaker_id: s,
                frame_labels: Some(frame_labels),
            });
        }
    }
    Corpus::new(utterances, spec.class_count, spec.speaker_count)
}

fn majority(owners: &[usize], classes: usize) -> usize {
    let mut counts = vec![0usize; classes];
    for &c in owners {
        counts[c] += 1;
    }
    // first class to reach the max wins, so a 50/50 frame takes the earlier segment
    let best = *counts.iter().max().unwrap_or(&0);
    owners.iter().copied().find(|&c| counts[c] == best).unwrap_or(0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::{frame_centered, log_power_spectrum, SHORT_FFT, SHORT_FRAME_LEN};

    fn small() -> SynthSpec {
        SynthSpec {
            class_count: 8,
            speaker_count: 4,
            utterances_per_speaker: 4,
            utterance_seconds: 2.0,
            seed: 7,
        }
    }

    #[test]
    fn bookkeeping() {
        let c = synth_corpus(&small()).unwrap();
        assert_eq!(c.len(), 16);
        for u in &c.utterances {
            assert_eq!(u.wave.len(), 32000);
            assert_eq!(u.frame_labels.as_ref().unwrap().len(), 200);
            assert!(u.wave.samples().iter().all(|s| s.abs() <= 1.0));
        }
    }

    #[test]
    fn deterministic() {
        assert_eq!(synth_corpus(&small()).unwrap(), synth_corpus(&small()).unwrap());
        let mut other = small();
        other.seed = 8;
        assert_ne!(synth_corpus(&small()).unwrap(), synth_corpus(&other).unwrap());
    }

    #[test]
    fn rejects_zero_counts() {
        let mut s = small();
        s.class_count = 0;
        assert!(synth_corpus(&s).is_err());
    }

    #[test]
    fn majority_label_rule() {
        assert_eq!(majority(&[1, 1, 2], 3), 1);
        assert_eq!(majority(&[1, 2, 2], 3), 2);
        assert_eq!(majority(&[0, 0, 2, 2], 3), 0);
    }

    /// Pure-class renderings of two different classes by the same speaker
    /// differ in their per-frame LPS peak on most frames.
    #[test]
    fn classes_have_distinct_spectra() {
        let voice = speaker_voice(3, 0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let peaks = |c: usize, rng: &mut ChaCha8Rng| {
            let mut x = Vec::new();
            render_segment(&mut x, 16000, class_formants(c), &voice, 0.5, rng);
            let w = Waveform::from_samples(x).unwrap();
            let g = frame_centered(&w, SHORT_FRAME_LEN, HOP).unwrap();
            let m = log_power_spectrum(&g, SHORT_FFT).unwrap();
            (0..m.n_frames)
                .map(|i| {
                    m.row(i)
                        .iter()
                        .enumerate()
                        .max_by(|a, b| a.1.total_cmp(b.1))
                        .unwrap()
                        .0
                })
                .collect::<Vec<_>>()
        };
        for (a, b) in [(0, 1), (2, 5), (3, 7)] {
            let pa = peaks(a, &mut rng);
            let pb = peaks(b, &mut rng);
            let differ = pa.iter().zip(&pb).filter(|(x, y)| x != y).count();
            assert!(differ * 2 > pa.len(), "classes {a},{b}: {differ}/{}", pa.len());
        }
    }

    #[test]
    fn labels_match_generating_segment() {
        let c = synth_corpus(&small()).unwrap();
        // every label is a valid class and segments last >= 5 frames except at the tail
        for u in &c.utterances {
            let labels = u.frame_labels.as_ref().unwrap();
            let mut run = 1;
            let mut runs = vec![];
            for w in labels.windows(2) {
                if w[0] == w[1] {
                    run += 1;
                } else {
                    runs.push(run);
                    run = 1;
                }
            }
            assert!(runs.iter().all(|&r| r >= 4), "{runs:?}");
        }
    }
}
