use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::extract::extract_representations;
use super::linear::{train_linear_probe, LabeledSet, ProbeConfig, ProbeResult};
use super::split::{one_shot_split, stratified_subsample, utterance_split, Split};
use crate::corpus::Corpus;
use crate::encoder::{MgfModel, Representation};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeKind {
    /// Per-frame class labels from frame representations.
    FrameClass,
    /// Speaker identity from mean-pooled representations.
    Speaker,
    /// Speaker identity with one training utterance per speaker.
    OneShotSpeaker,
}

impl ProbeKind {
    pub const ALL: [ProbeKind; 3] = [Self::FrameClass, Self::Speaker, Self::OneShotSpeaker];

    pub fn name(self) -> &'static str {
        match self {
            Self::FrameClass => "frame_class",
            Self::Speaker => "speaker",
            Self::OneShotSpeaker => "one_shot_speaker",
        }
    }
}

impl fmt::Display for ProbeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ProbeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::UnknownKind(s.to_string()))
    }
}

/// What to probe, with how much of the labeled training data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeTask {
    pub kind: ProbeKind,
    pub label_fraction: f64,
    pub seed: u64,
}

impl ProbeTask {
    pub fn new(kind: ProbeKind, label_fraction: f64, seed: u64) -> Result<Self> {
        let task = Self {
            kind,
            label_fraction,
            seed,
        };
        task.validate()?;
        Ok(task)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.label_fraction > 0.0 && self.label_fraction <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "label fraction {} outside (0, 1]",
                self.label_fraction
            )));
        }
        Ok(())
    }
}

/// Every frame of the given utterances with its class label.
pub fn frame_set(corpus: &Corpus, reps: &[Representation], utts: &[usize]) -> Result<LabeledSet> {
    let dim = reps.first().map_or(0, Representation::dim);
    let mut set = LabeledSet::new(dim);
    for &i in utts {
        let u = &corpus.utterances[i];
        let labels = u.frame_labels.as_ref().ok_or_else(|| {
            Error::InvalidArgument(format!("utterance {} has no frame labels", u.id))
        })?;
        let rep = &reps[i];
        if labels.len() != rep.n_frames() {
            return Err(Error::LabelAlignment {
                id: u.id.clone(),
                labels: labels.len(),
                frames: rep.n_frames(),
            });
        }
        for (f, &y) in labels.iter().enumerate() {
            set.push(rep.row(f), y);
        }
    }
    Ok(set)
}

/// One mean-pooled vector per utterance labeled with its speaker.
pub fn pooled_set(corpus: &Corpus, reps: &[Representation], utts: &[usize]) -> LabeledSet {
    let dim = reps.first().map_or(0, Representation::dim);
    let mut set = LabeledSet::new(dim);
    for &i in utts {
        set.push(&reps[i].mean_pooled(), corpus.utterances[i].speaker_id);
    }
    set
}

/// The utterance split a task trains and tests on.
pub fn task_split(corpus: &Corpus, task: &ProbeTask, cfg: &ProbeConfig) -> Result<Split> {
    match task.kind {
        ProbeKind::OneShotSpeaker => one_shot_split(corpus, task.seed),
        _ => utterance_split(corpus, cfg.test_fraction, task.seed),
    }
}

/// Train and test sets for `task` plus the class count.
pub fn task_sets(
    corpus: &Corpus,
    reps: &[Representation],
    task: &ProbeTask,
    cfg: &ProbeConfig,
) -> Result<(LabeledSet, LabeledSet, usize)> {
    task.validate()?;
    if reps.len() != corpus.len() {
        return Err(Error::LengthMismatch(corpus.len(), reps.len()));
    }
    let split = task_split(corpus, task, cfg)?;
    let (train, test, classes) = match task.kind {
        ProbeKind::FrameClass => (
            frame_set(corpus, reps, &split.train)?,
            frame_set(corpus, reps, &split.test)?,
            corpus.class_count,
        ),
        ProbeKind::Speaker | ProbeKind::OneShotSpeaker => (
            pooled_set(corpus, reps, &split.train),
            pooled_set(corpus, reps, &split.test),
            corpus.speaker_count,
        ),
    };
    let train = if task.label_fraction < 1.0 {
        train.subset(&stratified_subsample(&train.y, task.label_fraction, task.seed)?)
    } else {
        train
    };
    Ok((train, test, classes))
}

/// Linear probe on precomputed representations.
pub fn probe_representations(
    corpus: &Corpus,
    reps: &[Representation],
    task: &ProbeTask,
    cfg: &ProbeConfig,
    checkpoint_id: &str,
) -> Result<ProbeResult> {
    let (train, test, classes) = task_sets(corpus, reps, task, cfg)?;
    train_linear_probe(&train, &test, classes, cfg, task.seed, checkpoint_id)
}

/// Extracts representations with the frozen `model` and probes them.
pub fn run_probe(
    model: &MgfModel,
    checkpoint_id: &str,
    corpus: &Corpus,
    task: &ProbeTask,
    cfg: &ProbeConfig,
    cache_dir: Option<&Path>,
) -> Result<ProbeResult> {
    let reps = extract_representations(model, checkpoint_id, corpus, cache_dir)?;
    probe_representations(corpus, &reps, task, cfg, checkpoint_id)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{synth_corpus, SynthSpec};
    use crate::encoder::EncoderConfig;
    use crate::probe::model_fingerprint;

    fn small() -> Corpus {
        synth_corpus(&SynthSpec {
            class_count: 3,
            speaker_count: 3,
            utterances_per_speaker: 3,
            utterance_seconds: 1.0,
            seed: 2,
        })
        .unwrap()
    }

    #[test]
    fn kinds_parse() {
        for k in ProbeKind::ALL {
            assert_eq!(k.name().parse::<ProbeKind>().unwrap(), k);
        }
        assert!("phone".parse::<ProbeKind>().is_err());
        assert!(ProbeTask::new(ProbeKind::Speaker, 0.0, 0).is_err());
    }

    #[test]
    fn frozen_probe_is_deterministic_and_leaves_encoder_untouched() {
        let corpus = small();
        let model = MgfModel::new(EncoderConfig::tiny(), 5).unwrap();
        let before = model.params.clone();
        let id = model_fingerprint(&model);
        let cfg = ProbeConfig {
            epochs: 5,
            ..ProbeConfig::default()
        };
        for kind in ProbeKind::ALL {
            let task = ProbeTask::new(kind, 1.0, 1).unwrap();
            let a = run_probe(&model, &id, &corpus, &task, &cfg, None).unwrap();
            let b = run_probe(&model, &id, &corpus, &task, &cfg, None).unwrap();
            assert_eq!(a, b);
            assert!((0.0..=1.0).contains(&a.accuracy));
            assert_eq!(a.checkpoint_id, id);
        }
        assert_eq!(model.params, before);
    }

    #[test]
    fn frame_sets_have_one_row_per_frame() {
        let corpus = small();
        let model = MgfModel::new(EncoderConfig::tiny(), 5).unwrap();
        let reps = extract_representations(&model, "m", &corpus, None).unwrap();
        let set = frame_set(&corpus, &reps, &[0, 1]).unwrap();
        assert_eq!(set.len(), 200);
        assert_eq!(set.dim, 16);
        assert_eq!(pooled_set(&corpus, &reps, &[0, 4]).y, vec![
            corpus.utterances[0].speaker_id,
            corpus.utterances[4].speaker_id
        ]);
    }
}
