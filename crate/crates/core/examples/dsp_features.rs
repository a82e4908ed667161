//! Frame-level regression targets and SI-SDR on a synthetic utterance.
//!
//! cargo run --release --example dsp_features

use mgf::corpus::{synth_corpus, SynthSpec};
use mgf::dsp::{si_sdr, TargetKind, Waveform};

fn main() -> anyhow::Result<()> {
    let corpus = synth_corpus(&SynthSpec {
        class_count: 4,
        speaker_count: 2,
        utterances_per_speaker: 1,
        utterance_seconds: 2.0,
        seed: 0,
    })?;
    let u = &corpus.utterances[0];
    println!("utterance {} ({:.2} s, {} frames)", u.id, u.wave.duration_secs(), u.n_frames());

    for kind in TargetKind::ALL {
        let m = kind.extract(&u.wave)?;
        let (lo, hi) = m
            .values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        println!(
            "{:<8} {:>4} ms context: {} x {} values in [{lo:.2}, {hi:.2}]",
            kind.name(),
            kind.context_ms(),
            m.n_frames,
            m.n_dims
        );
    }

    let clean = u.wave.samples();
    for (label, noise_scale) in [("clean copy", 0.0), ("light noise", 0.01), ("heavy noise", 0.3)] {
        let noisy: Vec<f64> = clean
            .iter()
            .enumerate()
            .map(|(i, x)| 0.5 * x + noise_scale * ((i as f64 * 12.9898).sin() * 43758.5453).fract())
            .collect();
        let db = si_sdr(&u.wave, &Waveform::from_samples(noisy)?)?;
        println!("SI-SDR {label:<12} {db:8.2} dB");
    }
    Ok(())
}
