use crate::corpus::Corpus;
use crate::dsp::{FeatureMatrix, TargetKind, Waveform};
use crate::error::Result;
use crate::objectives::{cyclic_pad, ObjectiveConfig};
use crate::parallel::par_map;

/// Per-dimension mean and standard deviation of one feature kind.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl FeatureStats {
    fn from_matrices(mats: &[&FeatureMatrix]) -> Self {
        let d = mats[0].n_dims;
        let mut sum = vec![0.0; d];
        let mut sq = vec![0.0; d];
        let mut n = 0usize;
        for m in mats {
            for i in 0..m.n_frames {
                for (j, &x) in m.row(i).iter().enumerate() {
                    sum[j] += x;
                    sq[j] += x * x;
                }
            }
            n += m.n_frames;
        }
        let n = n.max(1) as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
        let std = sq
            .iter()
            .zip(&mean)
            .map(|(q, m)| (q / n - m * m).max(0.0).sqrt().max(1e-8))
            .collect();
        Self { mean, std }
    }

    fn standardize(&self, m: &mut FeatureMatrix) {
        let d = m.n_dims;
        for row in m.values.chunks_mut(d) {
            for ((x, mu), sd) in row.iter_mut().zip(&self.mean).zip(&self.std) {
                *x = (*x - mu) / sd;
            }
        }
    }
}

/// An utterance extended to at least one crop, with standardized
/// frame-feature targets for each configured kind.
#[derive(Debug, Clone)]
pub struct PreparedUtterance {
    pub wave: Waveform,
    pub targets: Vec<FeatureMatrix>,
}

/// Training corpus with targets precomputed once.
#[derive(Debug, Clone)]
pub struct TrainData {
    pub utterances: Vec<PreparedUtterance>,
    pub kinds: Vec<TargetKind>,
    pub stats: Vec<FeatureStats>,
}

impl TrainData {
    pub fn prepare(corpus: &Corpus, objective: &ObjectiveConfig) -> Result<Self> {
        let kinds = objective.frame_kinds.clone();
        let mut utterances = par_map(&corpus.utterances, |u| -> Result<PreparedUtterance> {
            let wave = cyclic_pad(&u.wave, objective.crop_samples);
            let targets = kinds
                .iter()
                .map(|k| k.extract(&wave))
                .collect::<Result<Vec<_>>>()?;
            Ok(PreparedUtterance { wave, targets })
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
        let stats: Vec<FeatureStats> = (0..kinds.len())
            .map(|k| {
                let mats: Vec<&FeatureMatrix> =
                    utterances.iter().map(|u| &u.targets[k]).collect();
                FeatureStats::from_matrices(&mats)
            })
            .collect();
        for u in &mut utterances {
            for (m, s) in u.targets.iter_mut().zip(&stats) {
                s.standardize(m);
            }
        }
        Ok(Self {
            utterances,
            kinds,
            stats,
        })
    }

    pub fn len(&self) -> usize {
        self.utterances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.utterances.is_empty()
    }
}
