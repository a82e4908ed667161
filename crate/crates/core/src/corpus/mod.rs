//! Utterances, corpora and noise sources.

mod manifest;
mod noise;
mod synth;
mod wav;

pub use manifest::{load_manifest, write_corpus, ManifestRecord};
pub use noise::{noise_sample, NoiseBank, SYNTHETIC_NOISE_RMS};
pub use synth::{class_formants, synth_corpus, SynthSpec};
pub use wav::{decode_wav, encode_wav, read_wav, write_wav};

use crate::dsp::{Waveform, HOP};
use crate::error::{Error, Result};

/// Number of 10 ms encoder frames for a signal of `len` samples.
pub fn frame_count(len: usize) -> usize {
    len / HOP
}

#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    pub id: String,
    pub wave: Waveform,
    pub speaker_id: usize,
    /// One class id per 10 ms frame.
    pub frame_labels: Option<Vec<usize>>,
}

impl Utterance {
    pub fn n_frames(&self) -> usize {
        frame_count(self.wave.len())
    }

    fn validate(&self) -> Result<()> {
        if let Some(labels) = &self.frame_labels {
            if labels.len() != self.n_frames() {
                return Err(Error::LabelAlignment {
                    id: self.id.clone(),
                    labels: labels.len(),
                    frames: self.n_frames(),
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub utterances: Vec<Utterance>,
    pub class_count: usize,
    pub speaker_count: usize,
}

impl Corpus {
    pub fn new(
        utterances: Vec<Utterance>,
        class_count: usize,
        speaker_count: usize,
    ) -> Result<Self> {
        if utterances.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        for u in &utterances {
            u.validate()?;
            if u.speaker_id >= speaker_count {
                return Err(Error::Utterance {
                    id: u.id.clone(),
                    reason: format!("speaker {} >= speaker_count {speaker_count}", u.speaker_id),
                });
            }
            if let Some(bad) = u
                .frame_labels
                .iter()
                .flatten()
                .find(|&&c| c >= class_count)
            {
                return Err(Error::Utterance {
                    id: u.id.clone(),
                    reason: format!("label {bad} >= class_count {class_count}"),
                });
            }
        }
        Ok(Self {
            utterances,
            class_count,
            speaker_count,
        })
    }

    pub fn len(&self) -> usize {
        self.utterances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.utterances.is_empty()
    }

    /// Sub-corpus with the given utterance indices, in that order.
    pub fn subset(&self, indices: &[usize]) -> Result<Corpus> {
        Corpus::new(
            indices.iter().map(|&i| self.utterances[i].clone()).collect(),
            self.class_count,
            self.speaker_count,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn utt(id: &str, speaker: usize, labels: Option<Vec<usize>>) -> Utterance {
        Utterance {
            id: id.into(),
            wave: Waveform::from_samples(vec![0.1; 1600]).unwrap(),
            speaker_id: speaker,
            frame_labels: labels,
        }
    }

    #[test]
    fn validates_labels_and_speakers() {
        assert!(matches!(Corpus::new(vec![], 2, 2), Err(Error::EmptyCorpus)));
        assert!(Corpus::new(vec![utt("a", 0, Some(vec![1; 10]))], 2, 1).is_ok());
        assert!(matches!(
            Corpus::new(vec![utt("a", 0, Some(vec![0; 9]))], 2, 1),
            Err(Error::LabelAlignment { labels: 9, frames: 10, .. })
        ));
        assert!(Corpus::new(vec![utt("a", 0, Some(vec![2; 10]))], 2, 1).is_err());
        assert!(Corpus::new(vec![utt("a", 1, None)], 2, 1).is_err());
    }
}
