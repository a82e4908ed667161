use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use serde::Serialize;

use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::seeds::rng_for;

const STREAM_SPLIT: u64 = 0x7370_6c74;
const STREAM_ONE_SHOT: u64 = 0x6f6e_6573;
const STREAM_STRATA: u64 = 0x7374_7261;

/// Train/test utterance indices into a corpus, each sorted ascending.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    /// Speakers left out because they have too few utterances.
    pub excluded_speakers: Vec<usize>,
}

fn by_speaker(corpus: &Corpus) -> BTreeMap<usize, Vec<usize>> {
    let mut map: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, u) in corpus.utterances.iter().enumerate() {
        map.entry(u.speaker_id).or_default().push(i);
    }
    map
}

fn held_out(fraction: f64, n: usize) -> usize {
    ((fraction * n as f64).ceil() as usize).min(n)
}

fn finish(mut split: Split) -> Result<Split> {
    split.train.sort_unstable();
    split.test.sort_unstable();
    if split.train.is_empty() || split.test.is_empty() {
        return Err(Error::DegenerateSplit(format!(
            "{} train and {} test utterances",
            split.train.len(),
            split.test.len()
        )));
    }
    Ok(split)
}

/// Per speaker, `ceil(test_fraction·n)` utterances go to test and the rest
/// to train; speakers with a single utterance are excluded.
pub fn utterance_split(corpus: &Corpus, test_fraction: f64, seed: u64) -> Result<Split> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "test fraction {test_fraction} outside (0, 1)"
        )));
    }
    let mut split = Split::default();
    for (speaker, mut utts) in by_speaker(corpus) {
        if utts.len() < 2 {
            log::warn!("speaker {speaker} has one utterance; excluded from the split");
            split.excluded_speakers.push(speaker);
            continue;
        }
        utts.shuffle(&mut rng_for(seed, STREAM_SPLIT, speaker as u64));
        let n_test = held_out(test_fraction, utts.len()).min(utts.len() - 1);
        split.test.extend_from_slice(&utts[..n_test]);
        split.train.extend_from_slice(&utts[n_test..]);
    }
    finish(split)
}

/// Exactly one training utterance per speaker and `ceil(0.2·r)` of the
/// remaining `r` for test. Speakers with one utterance are excluded.
pub fn one_shot_split(corpus: &Corpus, seed: u64) -> Result<Split> {
    let mut split = Split::default();
    for (speaker, mut utts) in by_speaker(corpus) {
        if utts.len() < 2 {
            log::warn!("speaker {speaker} has one utterance; excluded from the one-shot split");
            split.excluded_speakers.push(speaker);
            continue;
        }
        utts.shuffle(&mut rng_for(seed, STREAM_ONE_SHOT, speaker as u64));
        split.train.push(utts[0]);
        let rest = &utts[1..];
        split.test.extend_from_slice(&rest[..held_out(0.2, rest.len())]);
    }
    finish(split)
}

/// Indices of a class-stratified subsample keeping `round(fraction·n_c)`
/// items of every class `c`, sorted ascending.
pub fn stratified_subsample(labels: &[usize], fraction: f64, seed: u64) -> Result<Vec<usize>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "label fraction {fraction} outside (0, 1]"
        )));
    }
    let mut classes: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &y) in labels.iter().enumerate() {
        classes.entry(y).or_default().push(i);
    }
    let mut keep = Vec::new();
    for (class, mut items) in classes {
        let n = (fraction * items.len() as f64).round() as usize;
        if n == 0 {
            return Err(Error::Stratification { class, fraction });
        }
        items.shuffle(&mut rng_for(seed, STREAM_STRATA, class as u64));
        keep.extend_from_slice(&items[..n]);
    }
    keep.sort_unstable();
    Ok(keep)
}
