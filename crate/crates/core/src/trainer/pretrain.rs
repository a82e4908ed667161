use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;

use super::checkpoint::{load_checkpoint, save_checkpoint};
use super::config::{lr_schedule, TrainConfig};
use super::data::TrainData;
use super::step::{train_step, TrainState};
use crate::corpus::{Corpus, NoiseBank};
use crate::encoder::{EncoderConfig, MgfModel};
use crate::error::{Error, Result};
use crate::objectives::LossReport;
use crate::seeds::{derive_seed, rng_for};

pub const LOG_HEADER: &str = "step,lr,l_sample,l_frame,l_phoneme,l_sentence,l_total";
pub const CHECKPOINT_FILE: &str = "checkpoint.mgf";
pub const LOG_FILE: &str = "train_log.csv";

const STREAM_INIT: u64 = 0x696e_6974;
const STREAM_SHUFFLE: u64 = 0x7368_7566;

/// Result of a pretraining run.
#[derive(Debug, Clone)]
pub struct PretrainOutcome {
    pub checkpoint: PathBuf,
    pub log: PathBuf,
    /// Reports of the steps taken by this call (not those before a resume).
    pub reports: Vec<LossReport>,
    pub state: TrainState,
}

/// Shuffled batches for `epoch`; a trailing batch of one is merged into
/// the previous batch.
pub fn epoch_batches(n: usize, batch_size: usize, seed: u64, epoch: usize) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng_for(seed, STREAM_SHUFFLE, epoch as u64));
    let mut batches: Vec<Vec<usize>> = order.chunks(batch_size).map(<[usize]>::to_vec).collect();
    if batches.len() > 1 && batches.last().is_some_and(|b| b.len() < 2) {
        let last = batches.pop().expect("nonempty");
        batches.last_mut().expect("nonempty").extend(last);
    }
    batches
}

/// Freshly initialised training state for `cfg.seed`.
pub fn initial_state(enc: &EncoderConfig, cfg: &TrainConfig) -> Result<TrainState> {
    let model = MgfModel::new(enc.clone(), derive_seed(cfg.seed, STREAM_INIT, 0))?;
    Ok(TrainState::new(model))
}

fn log_row(step: u64, lr: f64, r: &LossReport) -> String {
    format!(
        "{step},{lr},{},{},{},{},{}",
        r.l_sample, r.l_frame, r.l_phoneme, r.l_sentence, r.l_total
    )
}

fn write_atomic(path: &Path, text: &str) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, text).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Log rows up to and including `step` from an earlier run.
fn resumed_log(path: &Path, step: u64) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    if lines.next() != Some(LOG_HEADER) {
        return Err(Error::Config(format!("{} is not a training log", path.display())));
    }
    Ok(lines
        .filter(|l| {
            l.split(',')
                .next()
                .and_then(|s| s.parse::<u64>().ok())
                .is_some_and(|s| s <= step)
        })
        .map(str::to_owned)
        .collect())
}

/// Epoch loop with seeded shuffling. The checkpoint and log under `out_dir`
/// are rewritten at the end of every epoch. With `resume`, an existing
/// checkpoint there is continued from its step.
pub fn pretrain(
    corpus: &Corpus,
    enc: &EncoderConfig,
    cfg: &TrainConfig,
    bank: &NoiseBank,
    out_dir: impl AsRef<Path>,
    resume: bool,
) -> Result<PretrainOutcome> {
    cfg.validate()?;
    enc.validate()?;
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let data = TrainData::prepare(corpus, &cfg.objective)?;
    pretrain_prepared(&data, enc, cfg, bank, out_dir, resume)
}

/// [`pretrain`] on already prepared data, so that several runs over one
/// corpus share the target extraction.
pub fn pretrain_prepared(
    data: &TrainData,
    enc: &EncoderConfig,
    cfg: &TrainConfig,
    bank: &NoiseBank,
    out_dir: impl AsRef<Path>,
    resume: bool,
) -> Result<PretrainOutcome> {
    cfg.validate()?;
    enc.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    if data.len() < 2 {
        return Err(Error::TooFewSentences(data.len()));
    }
    if data.kinds != cfg.objective.frame_kinds {
        return Err(Error::Config(
            "prepared targets do not match the objective's frame kinds".into(),
        ));
    }
    if data.utterances.iter().any(|u| u.wave.len() < cfg.objective.crop_samples) {
        return Err(Error::Config("prepared waves are shorter than the crop".into()));
    }
    let out_dir = out_dir.as_ref();
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let ckpt = out_dir.join(CHECKPOINT_FILE);
    let log_path = out_dir.join(LOG_FILE);

    let (mut state, mut rows) = if resume && ckpt.exists() {
        let (state, saved) = load_checkpoint(&ckpt)?;
        if saved != *cfg || state.model.config != *enc {
            return Err(Error::Config(
                "resume configuration differs from the checkpoint's".into(),
            ));
        }
        let rows = resumed_log(&log_path, state.step)?;
        (state, rows)
    } else {
        (initial_state(enc, cfg)?, Vec::new())
    };

    let steps_per_epoch = epoch_batches(data.len(), cfg.batch_size, cfg.seed, 0).len() as u64;
    if state.step % steps_per_epoch != 0 {
        return Err(Error::Config(format!(
            "checkpoint step {} is not at an epoch boundary",
            state.step
        )));
    }
    let start_epoch = (state.step / steps_per_epoch) as usize;
    let mut reports = Vec::new();
    for epoch in start_epoch..cfg.epochs {
        for batch in epoch_batches(data.len(), cfg.batch_size, cfg.seed, epoch) {
            let lr = lr_schedule(state.step + 1, cfg);
            let report = train_step(&mut state, data, &batch, cfg, bank)?;
            rows.push(log_row(state.step, lr, &report));
            log::debug!("step {} loss {}", state.step, report.l_total);
            reports.push(report);
        }
        save_checkpoint(&state, cfg, &ckpt)?;
        let mut text = String::from(LOG_HEADER);
        text.push('\n');
        for r in &rows {
            text.push_str(r);
            text.push('\n');
        }
        write_atomic(&log_path, &text)?;
        log::info!("epoch {}/{} done at step {}", epoch + 1, cfg.epochs, state.step);
    }
    if !ckpt.exists() {
        save_checkpoint(&state, cfg, &ckpt)?;
        write_atomic(&log_path, &format!("{LOG_HEADER}\n"))?;
    }
    Ok(PretrainOutcome {
        checkpoint: ckpt,
        log: log_path,
        reports,
        state,
    })
}
