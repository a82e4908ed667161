//! JSONL manifests with optional per-frame label CSVs.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{read_wav, write_wav, Corpus, Utterance};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestRecord {
    pub id: String,
    pub wav_path: String,
    pub speaker_id: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels_path: Option<String>,
}

fn resolve(base: &Path, p: &str) -> PathBuf {
    let p = Path::new(p);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn read_labels(path: &Path, id: &str) -> Result<Vec<usize>> {
    let text = fs::read_to_string(path).map_err(|e| Error::Utterance {
        id: id.to_string(),
        reason: format!("{}: {e}", path.display()),
    })?;
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(|l| {
            l.parse::<usize>().map_err(|_| Error::Utterance {
                id: id.to_string(),
                reason: format!("bad label {l:?}"),
            })
        })
        .collect()
}

/// Loads every utterance listed in a JSONL manifest, preserving order.
/// Relative paths resolve against the manifest's directory. Class and
/// speaker counts are one past the largest id seen.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<Corpus> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut utterances = Vec::new();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let rec: ManifestRecord = serde_json::from_str(line)?;
        let wave = read_wav(resolve(base, &rec.wav_path)).map_err(|e| Error::Utterance {
            id: rec.id.clone(),
            reason: e.to_string(),
        })?;
        let frame_labels = rec
            .labels_path
            .as_deref()
            .map(|p| read_labels(&resolve(base, p), &rec.id))
            .transpose()?;
        let utt = Utterance {
            id: rec.id,
            wave,
            speaker_id: rec.speaker_id,
            frame_labels,
        };
        utt.validate()?;
        utterances.push(utt);
    }
    if utterances.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let speaker_count = utterances.iter().map(|u| u.speaker_id).max().unwrap_or(0) + 1;
    let class_count = utterances
        .iter()
        .flat_map(|u| u.frame_labels.iter().flatten())
        .max()
        .map_or(0, |c| c + 1);
    Corpus::new(utterances, class_count, speaker_count)
}

/// Writes `wav/<id>.wav`, `labels/<id>.csv` and `manifest.jsonl` under
/// `dir`; returns the manifest path.
pub fn write_corpus(corpus: &Corpus, dir: impl AsRef<Path>) -> Result<PathBuf> {
    let dir = dir.as_ref();
    for sub in ["wav", "labels"] {
        fs::create_dir_all(dir.join(sub)).map_err(|e| Error::io(dir.join(sub), e))?;
    }
    let manifest = dir.join("manifest.jsonl");
    let mut out = Vec::new();
    for u in &corpus.utterances {
        let wav_rel = format!("wav/{}.wav", u.id);
        write_wav(dir.join(&wav_rel), &u.wave)?;
        let labels_path = match &u.frame_labels {
            Some(labels) => {
                let rel = format!("labels/{}.csv", u.id);
                let mut csv = String::with_capacity(labels.len() * 3);
                for l in labels {
                    csv.push_str(&l.to_string());
                    csv.push('\n');
                }
                fs::write(dir.join(&rel), csv).map_err(|e| Error::io(dir.join(&rel), e))?;
                Some(rel)
            }
            None => None,
        };
        let rec = ManifestRecord {
            id: u.id.clone(),
            wav_path: wav_rel,
            speaker_id: u.speaker_id,
            labels_path,
        };
        serde_json::to_writer(&mut out, &rec)?;
        out.write_all(b"\n").expect("write to Vec");
    }
    fs::write(&manifest, out).map_err(|e| Error::io(&manifest, e))?;
    Ok(manifest)
}
