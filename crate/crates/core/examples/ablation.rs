//! Drop-one ablation study: pretrain each variant briefly and probe
//! frame-class and one-shot speaker accuracy.
//!
//! cargo run --release --example ablation -- [epochs] [out_dir]

use mgf::corpus::{synth_corpus, NoiseBank, SynthSpec};
use mgf::encoder::EncoderConfig;
use mgf::probe::{ablation_csv, ablation_suite, ProbeConfig};
use mgf::trainer::{Ablation, TrainConfig};

fn main() -> anyhow::Result<()> {
    let mut args = std::env::args().skip(1);
    let epochs: usize = args.next().map(|s| s.parse()).transpose()?.unwrap_or(2);
    let out = std::path::PathBuf::from(args.next().unwrap_or_else(|| "mgf-out/ablation".into()));

    let corpus = synth_corpus(&SynthSpec::default())?;
    let base = TrainConfig {
        epochs,
        warmup_steps: 40,
        ..TrainConfig::desk()
    };
    let variants = Ablation::variants();
    let rows = ablation_suite(
        &corpus,
        &EncoderConfig::desk(),
        &base,
        &NoiseBank::Synthetic,
        &ProbeConfig::default(),
        &variants,
        &out,
        None,
    )?;
    let csv = ablation_csv(&rows, "synthetic:seed=0");
    std::fs::write(out.join("ablation.csv"), &csv)?;
    print!("{csv}");
    Ok(())
}
