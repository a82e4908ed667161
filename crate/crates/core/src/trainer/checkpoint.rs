use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::optim::AdamState;
use super::step::TrainState;
use crate::encoder::{CheckpointFile, EncoderConfig, MgfModel, ParamSet};
use crate::error::{Error, Result};

const PARAM_PREFIX: &str = "param/";
const M_PREFIX: &str = "adam.m/";
const V_PREFIX: &str = "adam.v/";

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Metadata {
    encoder: EncoderConfig,
    train: TrainConfig,
    step: u64,
    seed: u64,
    adam_t: u64,
}

/// Writes parameters, Adam moments, step and configuration atomically.
pub fn save_checkpoint(state: &TrainState, cfg: &TrainConfig, path: impl AsRef<Path>) -> Result<()> {
    let meta = Metadata {
        encoder: state.model.config.clone(),
        train: cfg.clone(),
        step: state.step,
        seed: cfg.seed,
        adam_t: state.adam.t,
    };
    let params = &state.model.params;
    let mut arrays = Vec::with_capacity(3 * params.len());
    for (prefix, values) in [
        (PARAM_PREFIX, params.values()),
        (M_PREFIX, state.adam.m.as_slice()),
        (V_PREFIX, state.adam.v.as_slice()),
    ] {
        for (name, a) in params.names().iter().zip(values) {
            arrays.push((format!("{prefix}{name}"), a.clone()));
        }
    }
    CheckpointFile {
        metadata: serde_json::to_value(&meta)?,
        arrays,
    }
    .write(path)
}

fn read(path: &Path) -> Result<(CheckpointFile, Metadata)> {
    let file = CheckpointFile::read(path)?;
    let meta: Metadata = serde_json::from_value(file.metadata.clone())
        .map_err(|e| Error::CorruptCheckpoint(format!("metadata: {e}")))?;
    Ok((file, meta))
}

fn collect(file: &CheckpointFile, template: &ParamSet, prefix: &str) -> Result<ParamSet> {
    let mut out = ParamSet::new();
    for name in template.names() {
        let key = format!("{prefix}{name}");
        let a = file
            .array(&key)
            .ok_or_else(|| Error::CorruptCheckpoint(format!("missing array {key}")))?;
        out.insert(name.clone(), a.clone());
    }
    Ok(out)
}

fn model_from(file: &CheckpointFile, meta: &Metadata) -> Result<MgfModel> {
    let template = MgfModel::new(meta.encoder.clone(), 0)?;
    let params = collect(file, &template.params, PARAM_PREFIX)?;
    MgfModel::with_params(meta.encoder.clone(), &params)
        .map_err(|e| Error::CorruptCheckpoint(e.to_string()))
}

/// Full training state and the configuration it was trained with.
pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(TrainState, TrainConfig)> {
    let (file, meta) = read(path.as_ref())?;
    let model = model_from(&file, &meta)?;
    let m = collect(&file, &model.params, M_PREFIX)?;
    let v = collect(&file, &model.params, V_PREFIX)?;
    let adam = AdamState {
        m: m.values().to_vec(),
        v: v.values().to_vec(),
        t: meta.adam_t,
    };
    Ok((
        TrainState {
            model,
            adam,
            step: meta.step,
        },
        meta.train,
    ))
}

/// Just the network from a checkpoint.
pub fn load_model(path: impl AsRef<Path>) -> Result<MgfModel> {
    let (file, meta) = read(path.as_ref())?;
    model_from(&file, &meta)
}
