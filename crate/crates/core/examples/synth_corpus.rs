//! Synthesize a labeled corpus and write it as WAVs, label CSVs and a
//! manifest, then load it back.
//!
//! cargo run --release --example synth_corpus -- [out_dir] [seed]

use mgf::corpus::{load_manifest, synth_corpus, write_corpus, SynthSpec};

fn main() -> anyhow::Result<()> {
    let mut args = std::env::args().skip(1);
    let out = args.next().unwrap_or_else(|| "mgf-out/corpus".into());
    let seed: u64 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(0);

    let spec = SynthSpec {
        seed,
        ..SynthSpec::default()
    };
    let corpus = synth_corpus(&spec)?;
    let manifest = write_corpus(&corpus, &out)?;
    let reloaded = load_manifest(&manifest)?;

    let frames: usize = corpus.utterances.iter().map(|u| u.n_frames()).sum();
    let mut per_class = vec![0usize; corpus.class_count];
    for u in &corpus.utterances {
        for &c in u.frame_labels.iter().flatten() {
            per_class[c] += 1;
        }
    }
    println!(
        "{} utterances, {} speakers, {} classes, {frames} frames",
        corpus.len(),
        corpus.speaker_count,
        corpus.class_count
    );
    println!("frames per class: {per_class:?}");
    println!("manifest: {}", manifest.display());
    println!(
        "reloaded {} utterances; labels identical: {}",
        reloaded.len(),
        reloaded
            .utterances
            .iter()
            .zip(&corpus.utterances)
            .all(|(a, b)| a.frame_labels == b.frame_labels)
    );
    Ok(())
}
