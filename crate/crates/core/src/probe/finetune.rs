use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::extract::{extract_representations, model_fingerprint};
use super::linear::{train_linear_probe, LabeledSet, ProbeConfig};
use super::split::{stratified_subsample, utterance_split};
use crate::autodiff::{Array, Tape};
use crate::corpus::Corpus;
use crate::encoder::{MgfModel, ParamSet};
use crate::error::{Error, Result};
use crate::seeds::{derive_seed, rng_for};
use crate::trainer::{clip_global_norm, AdamState};

const STREAM_SCRATCH: u64 = 0x7363_7261;
const STREAM_HEAD: u64 = 0x6865_6164;
const STREAM_FT_ORDER: u64 = 0x6674_6f72;

pub const SWEEP_HEADER: &str =
    "fraction,mode,seed,train_frames,accuracy,frozen_probe_accuracy,dataset";

/// Full fine-tuning of encoder plus linear head on labeled frames.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FinetuneConfig {
    pub epochs: usize,
    pub lr: f64,
    /// Utterances per optimizer step.
    pub batch_size: usize,
    pub clip_norm: f64,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            lr: 3e-4,
            batch_size: 8,
            clip_norm: 5.0,
        }
    }
}

/// Initialisation the fine-tuned encoder starts from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepMode {
    Pretrained,
    Scratch,
}

impl SweepMode {
    pub const ALL: [SweepMode; 2] = [Self::Pretrained, Self::Scratch];

    pub fn name(self) -> &'static str {
        match self {
            Self::Pretrained => "pretrained",
            Self::Scratch => "scratch",
        }
    }
}

impl fmt::Display for SweepMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub fraction: f64,
    pub mode: SweepMode,
    pub seed: u64,
    pub train_frames: usize,
    /// Frame-class accuracy after fine-tuning the whole model.
    pub accuracy: f64,
    /// Frame-class accuracy of a linear probe on the frozen initial encoder.
    pub frozen_probe_accuracy: f64,
}

/// Labeled frames chosen for training, grouped by utterance.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameSelection {
    /// `(utterance index, frame indices)` in ascending utterance order.
    pub by_utterance: Vec<(usize, Vec<usize>)>,
    /// Row indices into the frame set of all training utterances.
    pub rows: Vec<usize>,
}

impl FrameSelection {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

fn labels_of(corpus: &Corpus, i: usize) -> Result<&[usize]> {
    let u = &corpus.utterances[i];
    u.frame_labels
        .as_deref()
        .ok_or_else(|| Error::InvalidArgument(format!("utterance {} has no frame labels", u.id)))
}

/// Class-stratified subsample of the frames of `train_utts`, matching the
/// row order of the frozen-probe frame set.
pub fn select_frames(
    corpus: &Corpus,
    train_utts: &[usize],
    fraction: f64,
    seed: u64,
) -> Result<FrameSelection> {
    let mut origin = Vec::new();
    let mut labels = Vec::new();
    for &u in train_utts {
        for (f, &y) in labels_of(corpus, u)?.iter().enumerate() {
            origin.push((u, f));
            labels.push(y);
        }
    }
    let rows = stratified_subsample(&labels, fraction, seed)?;
    let mut grouped: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for &r in &rows {
        let (u, f) = origin[r];
        grouped.entry(u).or_default().push(f);
    }
    Ok(FrameSelection {
        by_utterance: grouped.into_iter().collect(),
        rows,
    })
}

fn init_head(d: usize, classes: usize, seed: u64) -> ParamSet {
    let mut rng = rng_for(seed, STREAM_HEAD, 0);
    let normal = Normal::new(0.0, 1.0 / (d as f64).sqrt()).expect("positive std");
    let w: Vec<f64> = (0..d * classes).map(|_| normal.sample(&mut rng)).collect();
    let mut head = ParamSet::new();
    head.insert("head.w", Array::new(vec![d, classes], w).expect("head shape"));
    head.insert("head.b", Array::zeros(&[classes]));
    head
}

fn wave_input(corpus: &Corpus, u: usize) -> Result<Array> {
    let w = corpus.utterances[u].wave.samples();
    Array::new(vec![1, w.len()], w.to_vec())
}

/// Fine-tunes `model` and a fresh linear head on the selected frames, then
/// returns the model, the head and frame accuracy on `test_utts`.
pub fn finetune_frame_classifier(
    mut model: MgfModel,
    corpus: &Corpus,
    selection: &FrameSelection,
    test_utts: &[usize],
    cfg: &FinetuneConfig,
    seed: u64,
) -> Result<(MgfModel, ParamSet, f64)> {
    let classes = corpus.class_count;
    let d = model.config.d_model;
    let mut head = init_head(d, classes, seed);
    let mut adam_model = AdamState::new(&model.params);
    let mut adam_head = AdamState::new(&head);
    let mut order: Vec<usize> = (0..selection.by_utterance.len()).collect();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng_for(seed, STREAM_FT_ORDER, epoch as u64));
        for chunk in order.chunks(cfg.batch_size.max(1)) {
            let mut tape = Tape::new();
            let p = model.bind(&mut tape, true);
            let h = head.bind(&mut tape, true);
            let mut rows = Vec::with_capacity(chunk.len());
            let mut onehot = Vec::new();
            for &k in chunk {
                let (u, frames) = &selection.by_utterance[k];
                let labels = labels_of(corpus, *u)?;
                let x = tape.constant(wave_input(corpus, *u)?);
                let rep = model.represent_batch(&mut tape, &p, x)?;
                let t = tape.shape(rep)[1];
                let rep = tape.reshape(rep, &[t, d])?;
                rows.push(tape.gather_rows(rep, frames)?);
                for &f in frames {
                    let mut row = vec![0.0; classes];
                    row[labels[f]] = 1.0;
                    onehot.extend(row);
                }
            }
            let m = onehot.len() / classes;
            let feats = tape.concat(&rows, 0)?;
            let logits = tape.matmul(feats, h.vars()[0])?;
            let logits = tape.add(logits, h.vars()[1])?;
            let logp = tape.log_softmax(logits, 1)?;
            let target = tape.constant(Array::new(vec![m, classes], onehot)?);
            let picked = tape.mul(logp, target)?;
            let total = tape.sum(picked)?;
            let loss = tape.scale(total, -1.0 / m as f64)?;
            let grads = tape.backward(loss)?;
            let mut g_model = p.gradients(&grads, &model.params);
            let g_head = h.gradients(&grads, &head);
            drop(grads);
            drop(tape);
            let n_model = g_model.len();
            g_model.extend(g_head);
            if g_model.iter().any(|a| !a.is_finite()) {
                return Err(Error::NonFiniteLoss("fine-tune"));
            }
            clip_global_norm(&mut g_model, cfg.clip_norm);
            let g_head = g_model.split_off(n_model);
            adam_model.update(&mut model.params, &g_model, cfg.lr)?;
            adam_head.update(&mut head, &g_head, cfg.lr)?;
        }
    }
    let accuracy = frame_accuracy(&model, &head, corpus, test_utts)?;
    Ok((model, head, accuracy))
}

/// Share of frames of `utts` whose argmax logit matches the label.
pub fn frame_accuracy(
    model: &MgfModel,
    head: &ParamSet,
    corpus: &Corpus,
    utts: &[usize],
) -> Result<f64> {
    let w = head.by_name("head.w").ok_or_else(|| Error::Config("missing head.w".into()))?;
    let b = head.by_name("head.b").ok_or_else(|| Error::Config("missing head.b".into()))?;
    let classes = b.len();
    let (mut hits, mut total) = (0usize, 0usize);
    for &u in utts {
        let labels = labels_of(corpus, u)?;
        let rep = model.represent(&corpus.utterances[u].wave)?;
        for (f, &y) in labels.iter().enumerate() {
            let x = rep.row(f);
            let mut best = (0, f64::NEG_INFINITY);
            for c in 0..classes {
                let z = b.data()[c]
                    + x.iter()
                        .enumerate()
                        .map(|(k, v)| v * w.data()[k * classes + c])
                        .sum::<f64>();
                if z > best.1 {
                    best = (c, z);
                }
            }
            hits += usize::from(best.0 == y);
            total += 1;
        }
    }
    if total == 0 {
        return Err(Error::DegenerateSplit("no test frames".into()));
    }
    Ok(hits as f64 / total as f64)
}

/// Settings of a data-efficiency sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub fractions: Vec<f64>,
    pub seeds: Vec<u64>,
    pub probe: ProbeConfig,
    pub finetune: FinetuneConfig,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            fractions: vec![0.01, 0.1, 1.0],
            seeds: vec![0],
            probe: ProbeConfig::default(),
            finetune: FinetuneConfig::default(),
        }
    }
}

/// Frame-class accuracy against label fraction, fine-tuning from the
/// pretrained weights and from a random initialisation.
pub fn data_efficiency_sweep(
    pretrained: &MgfModel,
    checkpoint_id: &str,
    corpus: &Corpus,
    cfg: &SweepConfig,
    cache_dir: Option<&Path>,
) -> Result<Vec<SweepRow>> {
    if let Some(&bad) = cfg.fractions.iter().find(|&&f| !(f > 0.0 && f <= 1.0)) {
        return Err(Error::InvalidArgument(format!("label fraction {bad} outside (0, 1]")));
    }
    let pre_reps = extract_representations(pretrained, checkpoint_id, corpus, cache_dir)?;
    let mut rows = Vec::new();
    for &seed in &cfg.seeds {
        let split = utterance_split(corpus, cfg.probe.test_fraction, seed)?;
        let scratch = MgfModel::new(
            pretrained.config.clone(),
            derive_seed(seed, STREAM_SCRATCH, 0),
        )?;
        let scratch_id = model_fingerprint(&scratch);
        let scratch_reps = extract_representations(&scratch, &scratch_id, corpus, cache_dir)?;
        for &fraction in &cfg.fractions {
            let selection = select_frames(corpus, &split.train, fraction, seed)?;
            for mode in SweepMode::ALL {
                let (init, reps, id) = match mode {
                    SweepMode::Pretrained => (pretrained, &pre_reps, checkpoint_id),
                    SweepMode::Scratch => (&scratch, &scratch_reps, scratch_id.as_str()),
                };
                let all_train = super::task::frame_set(corpus, reps, &split.train)?;
                let train: LabeledSet = all_train.subset(&selection.rows);
                let test = super::task::frame_set(corpus, reps, &split.test)?;
                let frozen =
                    train_linear_probe(&train, &test, corpus.class_count, &cfg.probe, seed, id)?;
                let (_, _, accuracy) = finetune_frame_classifier(
                    init.clone(),
                    corpus,
                    &selection,
                    &split.test,
                    &cfg.finetune,
                    seed,
                )?;
                log::info!(
                    "sweep fraction {fraction} {mode} seed {seed}: fine-tune {accuracy:.4}, frozen {:.4}",
                    frozen.accuracy
                );
                rows.push(SweepRow {
                    fraction,
                    mode,
                    seed,
                    train_frames: selection.len(),
                    accuracy,
                    frozen_probe_accuracy: frozen.accuracy,
                });
            }
        }
    }
    Ok(rows)
}

/// CSV with [`SWEEP_HEADER`].
pub fn sweep_csv(rows: &[SweepRow], dataset: &str) -> String {
    let mut out = format!("{SWEEP_HEADER}\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.fraction, r.mode, r.seed, r.train_frames, r.accuracy, r.frozen_probe_accuracy, dataset
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{synth_corpus, SynthSpec};
    use crate::encoder::EncoderConfig;

    fn small() -> Corpus {
        synth_corpus(&SynthSpec {
            class_count: 3,
            speaker_count: 2,
            utterances_per_speaker: 3,
            utterance_seconds: 1.0,
            seed: 4,
        })
        .unwrap()
    }

    #[test]
    fn selection_matches_fraction_and_order() {
        let c = small();
        let sel = select_frames(&c, &[0, 2, 3], 0.5, 1).unwrap();
        assert!(sel.by_utterance.iter().all(|(u, _)| [0, 2, 3].contains(u)));
        let n: usize = sel.by_utterance.iter().map(|(_, f)| f.len()).sum();
        assert_eq!(n, sel.len());
        assert!((sel.len() as f64 - 150.0).abs() <= 3.0);
        assert!(select_frames(&c, &[0], 0.001, 1).is_err());
    }

    #[test]
    fn sweep_rows_and_csv() {
        let c = small();
        let model = MgfModel::new(EncoderConfig::tiny(), 1).unwrap();
        let cfg = SweepConfig {
            fractions: vec![0.5, 1.0],
            seeds: vec![3],
            probe: ProbeConfig {
                epochs: 3,
                ..ProbeConfig::default()
            },
            finetune: FinetuneConfig {
                epochs: 1,
                ..FinetuneConfig::default()
            },
        };
        let rows = data_efficiency_sweep(&model, "m", &c, &cfg, None).unwrap();
        assert_eq!(rows.len(), 4);
        let csv = sweep_csv(&rows, "synthetic");
        assert_eq!(csv.lines().count(), 5);
        assert!(csv.starts_with(SWEEP_HEADER));
        assert_eq!(rows, data_efficiency_sweep(&model, "m", &c, &cfg, None).unwrap());
    }

    #[test]
    fn full_fraction_frozen_column_equals_plain_probe() {
        use crate::probe::{run_probe, ProbeKind, ProbeTask};
        let c = small();
        let model = MgfModel::new(EncoderConfig::tiny(), 1).unwrap();
        let cfg = SweepConfig {
            fractions: vec![1.0],
            seeds: vec![2],
            probe: ProbeConfig {
                epochs: 3,
                ..ProbeConfig::default()
            },
            finetune: FinetuneConfig {
                epochs: 1,
                ..FinetuneConfig::default()
            },
        };
        let rows = data_efficiency_sweep(&model, "m", &c, &cfg, None).unwrap();
        let task = ProbeTask::new(ProbeKind::FrameClass, 1.0, 2).unwrap();
        let plain = run_probe(&model, "m", &c, &task, &cfg.probe, None).unwrap();
        assert_eq!(rows[0].frozen_probe_accuracy, plain.accuracy);
    }
}
