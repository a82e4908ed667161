//! Plan the masked segments of a crop and fill them with noise.
//!
//! cargo run --release --example mask_plan -- [n_frames] [seed]

use mgf::corpus::{synth_corpus, NoiseBank, SynthSpec};
use mgf::dsp::HOP;
use mgf::objectives::{apply_masks, plan_masks, MaskFill};

fn main() -> anyhow::Result<()> {
    let mut args = std::env::args().skip(1);
    let n_frames: usize = args.next().map(|s| s.parse()).transpose()?.unwrap_or(200);
    let seed: u64 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(3);

    let plan = plan_masks(n_frames, seed);
    println!("{n_frames} frames, seed {seed}");
    for &(s, e) in &plan.segments {
        println!("  masked frames {s}..{e} ({} ms)", (e - s) * 10);
    }
    println!("coverage {:.1}%", 100.0 * plan.coverage());

    let corpus = synth_corpus(&SynthSpec {
        utterance_seconds: n_frames as f64 / 100.0,
        ..SynthSpec::default()
    })?;
    let crop = &corpus.utterances[0].wave;
    let masked = apply_masks(crop, &plan, &NoiseBank::Synthetic, MaskFill::Noise, seed)?;
    let changed = crop
        .samples()
        .iter()
        .zip(masked.samples())
        .filter(|(a, b)| a != b)
        .count();
    println!(
        "{changed} of {} samples replaced ({} expected)",
        crop.len(),
        plan.masked_frames().len() * HOP
    );
    Ok(())
}
