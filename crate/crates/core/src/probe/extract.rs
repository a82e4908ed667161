use std::path::Path;

use sha2::{Digest, Sha256};

use super::cache::{cache_path, read_array, write_array};
use crate::corpus::Corpus;
use crate::encoder::{file_sha256, MgfModel, Representation};
use crate::error::{Error, Result};
use crate::parallel::par_map;

/// Identifier of a checkpoint file: the hex SHA-256 of its bytes.
pub fn checkpoint_id(path: impl AsRef<Path>) -> Result<String> {
    file_sha256(path)
}

/// Identifier of an in-memory model: the hex SHA-256 of its configuration
/// and parameter bytes.
pub fn model_fingerprint(model: &MgfModel) -> String {
    let mut h = Sha256::new();
    h.update(serde_json::to_vec(&model.config).expect("config serializes"));
    for (name, a) in model.params.iter() {
        h.update(name.as_bytes());
        for &d in a.shape() {
            h.update((d as u64).to_le_bytes());
        }
        for v in a.data() {
            h.update(v.to_le_bytes());
        }
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

fn check_alignment(corpus: &Corpus, i: usize, rep: &Representation, dim: usize) -> Result<()> {
    let u = &corpus.utterances[i];
    if rep.dim() != dim {
        return Err(Error::CorruptCache(format!(
            "{}: cached width {} but the model has {dim}",
            u.id,
            rep.dim()
        )));
    }
    if let Some(labels) = &u.frame_labels {
        if labels.len() != rep.n_frames() {
            return Err(Error::LabelAlignment {
                id: u.id.clone(),
                labels: labels.len(),
                frames: rep.n_frames(),
            });
        }
    }
    Ok(())
}

/// Clean forward pass of every utterance, in corpus order. With a cache
/// directory, results are read from and written to
/// `<cache>/<checkpoint id>/<utterance id>.arr`.
pub fn extract_representations(
    model: &MgfModel,
    checkpoint_id: &str,
    corpus: &Corpus,
    cache_dir: Option<&Path>,
) -> Result<Vec<Representation>> {
    let idx: Vec<usize> = (0..corpus.len()).collect();
    let dim = model.config.d_model;
    par_map(&idx, |&i| -> Result<Representation> {
        let u = &corpus.utterances[i];
        let path = cache_dir.map(|d| cache_path(d, checkpoint_id, &u.id));
        let rep = match &path {
            Some(p) if p.exists() => Representation {
                values: read_array(p)?,
            },
            _ => {
                let rep = model.represent(&u.wave)?;
                if let Some(p) = &path {
                    write_array(p, &rep.values)?;
                }
                rep
            }
        };
        if rep.values.rank() != 2 {
            return Err(Error::CorruptCache(format!("{}: expected a matrix", u.id)));
        }
        check_alignment(corpus, i, &rep, dim)?;
        Ok(rep)
    })
    .into_iter()
    .collect()
}
