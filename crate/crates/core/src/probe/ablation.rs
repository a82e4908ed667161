use std::path::Path;

use serde::Serialize;

use super::extract::checkpoint_id;
use super::linear::ProbeConfig;
use super::task::{run_probe, ProbeKind, ProbeTask};
use crate::corpus::{Corpus, NoiseBank};
use crate::encoder::EncoderConfig;
use crate::error::Result;
use crate::trainer::{load_model, pretrain_prepared, Ablation, TrainConfig, TrainData};

pub const ABLATION_HEADER: &str = "variant,seed,frame_class_accuracy,frame_class_delta,\
one_shot_speaker_accuracy,one_shot_speaker_delta,status,dataset";

/// The two tasks every variant is probed on.
pub const ABLATION_TASKS: [ProbeKind; 2] = [ProbeKind::FrameClass, ProbeKind::OneShotSpeaker];

/// Probe accuracies of one pretrained variant, or why it has none.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationRow {
    pub variant: String,
    pub seed: u64,
    pub frame_class: Option<f64>,
    pub one_shot_speaker: Option<f64>,
    pub error: Option<String>,
}

impl AblationRow {
    pub fn accuracy(&self, kind: ProbeKind) -> Option<f64> {
        match kind {
            ProbeKind::FrameClass => self.frame_class,
            ProbeKind::OneShotSpeaker => self.one_shot_speaker,
            ProbeKind::Speaker => None,
        }
    }
}

fn run_variant(
    data: &TrainData,
    corpus: &Corpus,
    enc: &EncoderConfig,
    cfg: &TrainConfig,
    bank: &NoiseBank,
    probe: &ProbeConfig,
    dir: &Path,
    cache_dir: Option<&Path>,
) -> Result<(f64, f64)> {
    let out = pretrain_prepared(data, enc, cfg, bank, dir, false)?;
    let model = load_model(&out.checkpoint)?;
    let id = checkpoint_id(&out.checkpoint)?;
    let mut acc = [0.0; 2];
    for (a, kind) in acc.iter_mut().zip(ABLATION_TASKS) {
        let task = ProbeTask::new(kind, 1.0, cfg.seed)?;
        *a = run_probe(&model, &id, corpus, &task, probe, cache_dir)?.accuracy;
    }
    Ok((acc[0], acc[1]))
}

/// Pretrains each `(name, ablation)` variant of `base` under
/// `out_dir/<name>` and probes it on both tasks. A failing variant yields a
/// row with its error instead of aborting the suite.
#[allow(clippy::too_many_arguments)]
pub fn ablation_suite(
    corpus: &Corpus,
    enc: &EncoderConfig,
    base: &TrainConfig,
    bank: &NoiseBank,
    probe: &ProbeConfig,
    variants: &[(&str, Ablation)],
    out_dir: &Path,
    cache_dir: Option<&Path>,
) -> Result<Vec<AblationRow>> {
    base.validate()?;
    let data = TrainData::prepare(corpus, &base.objective)?;
    let mut rows = Vec::with_capacity(variants.len());
    for &(name, ablation) in variants {
        let cfg = TrainConfig {
            ablation,
            ..base.clone()
        };
        let result = run_variant(
            &data,
            corpus,
            enc,
            &cfg,
            bank,
            probe,
            &out_dir.join(name),
            cache_dir,
        );
        let row = match result {
            Ok((fc, os)) => {
                log::info!("variant {name} seed {}: frame {fc:.4}, one-shot {os:.4}", cfg.seed);
                AblationRow {
                    variant: name.to_string(),
                    seed: cfg.seed,
                    frame_class: Some(fc),
                    one_shot_speaker: Some(os),
                    error: None,
                }
            }
            Err(e) => {
                log::warn!("variant {name} failed: {e}");
                AblationRow {
                    variant: name.to_string(),
                    seed: cfg.seed,
                    frame_class: None,
                    one_shot_speaker: None,
                    error: Some(e.to_string()),
                }
            }
        };
        rows.push(row);
    }
    Ok(rows)
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

/// CSV with [`ABLATION_HEADER`]; deltas are variant minus the `full` row of
/// the same seed and are empty when either side is missing.
pub fn ablation_csv(rows: &[AblationRow], dataset: &str) -> String {
    let mut out = format!("{ABLATION_HEADER}\n");
    for r in rows {
        let full = rows
            .iter()
            .find(|f| f.variant == "full" && f.seed == r.seed);
        let delta = |kind: ProbeKind| {
            let base = full.and_then(|f| f.accuracy(kind));
            cell(r.accuracy(kind).zip(base).map(|(v, b)| v - b))
        };
        let status = match &r.error {
            None => "ok".to_string(),
            Some(e) => format!("failed: {}", e.replace([',', '\n'], ";")),
        };
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.variant,
            r.seed,
            cell(r.frame_class),
            delta(ProbeKind::FrameClass),
            cell(r.one_shot_speaker),
            delta(ProbeKind::OneShotSpeaker),
            status,
            dataset
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(v: &str, fc: Option<f64>, os: Option<f64>) -> AblationRow {
        AblationRow {
            variant: v.into(),
            seed: 1,
            frame_class: fc,
            one_shot_speaker: os,
            error: fc.is_none().then(|| "boom, bad".to_string()),
        }
    }

    #[test]
    fn deltas_are_variant_minus_full() {
        let rows = vec![
            row("full", Some(0.75), Some(0.5)),
            row("drop_phoneme", Some(0.5), Some(0.625)),
            row("drop_sentence", None, None),
        ];
        let csv = ablation_csv(&rows, "synthetic");
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], ABLATION_HEADER);
        assert_eq!(lines[1], "full,1,0.75,0,0.5,0,ok,synthetic");
        assert_eq!(lines[2], "drop_phoneme,1,0.5,-0.25,0.625,0.125,ok,synthetic");
        assert_eq!(lines[3], "drop_sentence,1,,,,,failed: boom; bad,synthetic");
    }
}
