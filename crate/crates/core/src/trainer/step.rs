use rand::Rng;

use super::config::{lr_schedule, TrainConfig};
use super::data::TrainData;
use super::optim::{clip_global_norm, AdamState};
use crate::autodiff::{Array, Tape, Var};
use crate::corpus::NoiseBank;
use crate::dsp::{Waveform, HOP};
use crate::encoder::{l2_normalize_rows, BoundParams, MgfModel};
use crate::error::{Error, Result};
use crate::objectives::{
    apply_masks, augment, loss_frame_tape, loss_phoneme_generative_tape, loss_phoneme_tape,
    loss_sample_tape, loss_sentence_tape, plan_masks_with, sample_crops, total_loss, LossParts,
    LossReport, MaskPlan, PhonemeSimilarity,
};
use crate::parallel::par_map;
use crate::seeds::{derive_seed, rng_for};

const STREAM_STEP: u64 = 0x7374_6570;
const STREAM_NEG: u64 = 0x6e65_6773;
const PURPOSE_CROP: u64 = 1;
const PURPOSE_AUG_A: u64 = 2;
const PURPOSE_AUG_B: u64 = 3;
const PURPOSE_PLAN: u64 = 4;
const PURPOSE_FILL: u64 = 5;

/// Parameters, optimizer moments and step counter. All randomness is
/// derived from the configured seed and `step`, so this is the full state.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub model: MgfModel,
    pub adam: AdamState,
    pub step: u64,
}

impl TrainState {
    pub fn new(model: MgfModel) -> Self {
        let adam = AdamState::new(&model.params);
        Self {
            model,
            adam,
            step: 0,
        }
    }
}

/// Network inputs and targets for one step, independent of parameters.
#[derive(Debug, Clone)]
pub struct StepBatch {
    /// Unaugmented first crops `[B, L]`: decoder target and clean pass.
    pub clean_a: Array,
    /// Augmented then masked first crops `[B, L]`.
    pub masked_a: Array,
    /// Augmented second crops `[B, L]`.
    pub aug_b: Array,
    pub plans: Vec<MaskPlan>,
    /// Standardized targets `[B, T, D]`, one per frame kind.
    pub targets: Vec<Array>,
    /// Flattened `b·T + f` index of every masked frame.
    pub anchors: Vec<usize>,
    /// `K` flattened clean-pass indices per anchor, anchor-major.
    pub negatives: Vec<usize>,
    pub n_frames: usize,
}

impl StepBatch {
    pub fn batch_size(&self) -> usize {
        self.plans.len()
    }
}

struct Sentence {
    clean_a: Waveform,
    masked_a: Waveform,
    aug_b: Waveform,
    plan: MaskPlan,
    first_frame: usize,
}

fn stack(rows: impl Iterator<Item = Vec<f64>>, shape: Vec<usize>) -> Result<Array> {
    Array::new(shape, rows.flatten().collect())
}

/// Crops, augments and masks the utterances at `indices` for step `step`.
pub fn build_batch(
    data: &TrainData,
    indices: &[usize],
    cfg: &TrainConfig,
    bank: &NoiseBank,
    step: u64,
) -> Result<StepBatch> {
    let b = indices.len();
    if b < 2 {
        return Err(Error::TooFewSentences(b));
    }
    let crop = cfg.objective.crop_samples;
    let t = crop / HOP;
    let step_seed = derive_seed(cfg.seed, STREAM_STEP, step);
    let slots: Vec<(usize, usize)> = indices.iter().copied().enumerate().collect();
    let sentences = par_map(&slots, |&(slot, u)| -> Result<Sentence> {
        let seed = |purpose: u64| derive_seed(step_seed, purpose, slot as u64);
        let wave = &data.utterances[u].wave;
        let crops = sample_crops(wave, crop, seed(PURPOSE_CROP));
        let (aug_a, _) = augment(&crops.a, bank, seed(PURPOSE_AUG_A))?;
        let (aug_b, _) = augment(&crops.b, bank, seed(PURPOSE_AUG_B))?;
        let plan = plan_masks_with(t, seed(PURPOSE_PLAN), &cfg.objective.mask);
        let masked_a = apply_masks(&aug_a, &plan, bank, cfg.objective.mask_fill, seed(PURPOSE_FILL))?;
        Ok(Sentence {
            clean_a: crops.a,
            masked_a,
            aug_b,
            plan,
            first_frame: crops.offset_a / HOP,
        })
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;

    let targets = data
        .kinds
        .iter()
        .enumerate()
        .map(|(k, kind)| {
            let rows = sentences.iter().zip(indices).map(|(s, &u)| {
                let m = &data.utterances[u].targets[k];
                m.rows(s.first_frame, s.first_frame + t).values
            });
            stack(rows, vec![b, t, kind.dim()])
        })
        .collect::<Result<Vec<_>>>()?;

    let anchors: Vec<usize> = sentences
        .iter()
        .enumerate()
        .flat_map(|(i, s)| s.plan.masked_frames().into_iter().map(move |f| i * t + f))
        .collect();
    // negatives share the anchor's frame index so position alone cannot
    // separate them from the positive
    let k = cfg.objective.negatives;
    let mut rng = rng_for(step_seed, STREAM_NEG, 0);
    let mut negatives = Vec::with_capacity(anchors.len() * k);
    for &a in &anchors {
        let (sb, f) = (a / t, a % t);
        for _ in 0..k {
            let mut other = rng.gen_range(0..b - 1);
            if other >= sb {
                other += 1;
            }
            negatives.push(other * t + f);
        }
    }

    let waves = |get: fn(&Sentence) -> &Waveform| {
        stack(sentences.iter().map(|s| get(s).samples().to_vec()), vec![b, crop])
    };
    Ok(StepBatch {
        clean_a: waves(|s| &s.clean_a)?,
        masked_a: waves(|s| &s.masked_a)?,
        aug_b: waves(|s| &s.aug_b)?,
        plans: sentences.into_iter().map(|s| s.plan).collect(),
        targets,
        anchors,
        negatives,
        n_frames: t,
    })
}

fn normalize_if(tape: &mut Tape, x: Var, sim: PhonemeSimilarity) -> Result<Var> {
    match sim {
        PhonemeSimilarity::Cosine => l2_normalize_rows(tape, x),
        PhonemeSimilarity::Dot => Ok(x),
    }
}

/// Weighted sum of the enabled objectives on `batch`; objectives with zero
/// effective weight are not evaluated and report 0.
pub fn batch_loss(
    tape: &mut Tape,
    model: &MgfModel,
    p: &BoundParams,
    batch: &StepBatch,
    cfg: &TrainConfig,
    data_kinds: &[crate::dsp::TargetKind],
) -> Result<(Var, LossReport)> {
    let w = cfg.effective_weights();
    let obj = &cfg.objective;
    let (b, t) = (batch.batch_size(), batch.n_frames);
    let need_clean = w.phoneme > 0.0;
    let need_b = w.sentence > 0.0;

    let mut inputs = vec![batch.masked_a.clone()];
    if need_clean {
        inputs.push(batch.clean_a.clone());
    }
    if need_b {
        inputs.push(batch.aug_b.clone());
    }
    let passes = inputs.len();
    let stacked = Array::new(
        vec![passes * b, obj.crop_samples],
        inputs.into_iter().flat_map(Array::into_data).collect(),
    )?;
    let x = tape.constant(stacked);
    let rep = model.represent_batch(tape, p, x)?;
    let rep_m = tape.slice(rep, 0, 0, b)?;
    let mut next = 1;
    let mut take_pass = |tape: &mut Tape| -> Result<Var> {
        let r = tape.slice(rep, 0, next * b, (next + 1) * b);
        next += 1;
        r
    };
    let rep_c = if need_clean { Some(take_pass(tape)?) } else { None };
    let rep_b = if need_b { Some(take_pass(tape)?) } else { None };

    let mut parts = LossParts::default();
    let mut terms: Vec<(f64, Var)> = Vec::new();
    let mut alpha = Vec::new();
    let mut frame_terms = Vec::new();

    if w.sample > 0.0 {
        let recon = model.decode_waveform(tape, p, rep_m)?;
        let clean = tape.constant(batch.clean_a.clone());
        let (l, a) = loss_sample_tape(tape, clean, recon)?;
        parts.sample = tape.item(l);
        alpha = a;
        terms.push((w.sample, l));
    }
    if w.frame > 0.0 {
        let unmasked: Vec<bool> = batch
            .plans
            .iter()
            .flat_map(|pl| pl.mask().into_iter().map(|m| !m))
            .collect();
        let mut heads = Vec::with_capacity(data_kinds.len());
        for (k, &kind) in data_kinds.iter().enumerate() {
            let pred = model.head_frame_features(tape, p, rep_m, kind)?;
            heads.push((kind, pred, batch.targets[k].clone(), obj.frame_weights[k]));
        }
        let (l, trace) = loss_frame_tape(tape, &heads, &unmasked)?;
        parts.frame = tape.item(l);
        frame_terms = trace;
        terms.push((w.frame, l));
    }
    if let Some(rep_c) = rep_c {
        if batch.anchors.is_empty() {
            return Err(Error::InvalidArgument("no masked frames to predict".into()));
        }
        let d = model.config.d_model;
        let flat_m = tape.reshape(rep_m, &[b * t, d])?;
        let flat_c = tape.reshape(rep_c, &[b * t, d])?;
        let anchors = tape.gather_rows(flat_m, &batch.anchors)?;
        let positives = tape.gather_rows(flat_c, &batch.anchors)?;
        let l = if cfg.ablation.generative_phoneme {
            loss_phoneme_generative_tape(tape, anchors, positives)?
        } else {
            let sim = obj.phoneme_similarity;
            let m = batch.anchors.len();
            let k = batch.negatives.len() / m;
            let negs = tape.gather_rows(flat_c, &batch.negatives)?;
            let anchors = normalize_if(tape, anchors, sim)?;
            let positives = normalize_if(tape, positives, sim)?;
            let negs = normalize_if(tape, negs, sim)?;
            let negs = tape.reshape(negs, &[m, k, d])?;
            loss_phoneme_tape(tape, anchors, positives, negs, obj.tau_phoneme)?
        };
        parts.phoneme = tape.item(l);
        terms.push((w.phoneme, l));
    }
    if let Some(rep_b) = rep_b {
        let za = model.head_sentence(tape, p, rep_m)?;
        let zb = model.head_sentence(tape, p, rep_b)?;
        let z = tape.concat(&[za, zb], 0)?;
        let l = loss_sentence_tape(tape, z, obj.tau_sentence)?;
        parts.sentence = tape.item(l);
        terms.push((w.sentence, l));
    }

    let mut report = total_loss(parts, &w)?;
    report.alpha = alpha;
    report.frame_terms = frame_terms;
    let mut total: Option<Var> = None;
    for (lambda, l) in terms {
        let s = tape.scale(l, lambda)?;
        total = Some(match total {
            None => s,
            Some(acc) => tape.add(acc, s)?,
        });
    }
    let total = total.ok_or_else(|| Error::Config("no objective enabled".into()))?;
    Ok((total, report))
}

/// One optimizer step on the utterances at `indices`. On error the state
/// is left untouched.
pub fn train_step(
    state: &mut TrainState,
    data: &TrainData,
    indices: &[usize],
    cfg: &TrainConfig,
    bank: &NoiseBank,
) -> Result<LossReport> {
    let batch = build_batch(data, indices, cfg, bank, state.step)?;
    let mut tape = Tape::new();
    let p = state.model.bind(&mut tape, true);
    let (loss, report) = batch_loss(&mut tape, &state.model, &p, &batch, cfg, &data.kinds)?;
    let grads = tape.backward(loss)?;
    let mut g = p.gradients(&grads, &state.model.params);
    drop(grads);
    drop(tape);
    if g.iter().any(|a| !a.is_finite()) {
        return Err(Error::NonFiniteLoss("gradient"));
    }
    clip_global_norm(&mut g, cfg.clip_norm);
    let lr = lr_schedule(state.step + 1, cfg);
    state.adam.update(&mut state.model.params, &g, lr)?;
    state.step += 1;
    Ok(report)
}
