use super::config::TrainConfig;
use super::data::TrainData;
use super::step::{batch_loss, build_batch};
use crate::autodiff::{finite_diff_check, GradCheckOptions, GradCheckReport};
use crate::corpus::{synth_corpus, NoiseBank, SynthSpec};
use crate::encoder::{BoundParams, EncoderConfig, MgfModel};
use crate::error::Result;
use crate::objectives::ObjectiveConfig;

/// Finite-difference check of the weighted total loss with respect to every
/// parameter of a model built from `enc`, on a fixed three-utterance batch
/// of 70-frame crops. `coords_per_param` bounds the sampled coordinates of
/// each parameter tensor.
pub fn full_loss_gradcheck(
    enc: &EncoderConfig,
    seed: u64,
    coords_per_param: usize,
) -> Result<GradCheckReport> {
    let corpus = synth_corpus(&SynthSpec {
        class_count: 3,
        speaker_count: 3,
        utterances_per_speaker: 1,
        utterance_seconds: 1.0,
        seed,
    })?;
    let cfg = TrainConfig {
        seed,
        objective: ObjectiveConfig {
            crop_samples: 70 * crate::dsp::HOP,
            negatives: 4,
            ..ObjectiveConfig::default()
        },
        ..TrainConfig::desk()
    };
    let data = TrainData::prepare(&corpus, &cfg.objective)?;
    let batch = build_batch(&data, &[0, 1, 2], &cfg, &NoiseBank::Synthetic, 0)?;
    let model = MgfModel::new(enc.clone(), seed)?;
    finite_diff_check(
        |tape, vars| {
            let p = BoundParams::from_vars(vars.to_vec());
            let (loss, _) = batch_loss(tape, &model, &p, &batch, &cfg, &data.kinds)?;
            Ok(loss)
        },
        model.params.values(),
        GradCheckOptions {
            eps: 1e-5,
            max_coords_per_param: Some(coords_per_param),
            seed,
            ..GradCheckOptions::default()
        },
    )
}
