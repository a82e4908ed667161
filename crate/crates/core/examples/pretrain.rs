//! Pretrain the desk model on the default synthetic corpus and chart the
//! loss.
//!
//! cargo run --release --example pretrain -- [epochs] [out_dir]

use mgf::corpus::{synth_corpus, NoiseBank, SynthSpec};
use mgf::encoder::EncoderConfig;
use mgf::plot::{line_chart_svg, Chart, Series};
use mgf::trainer::{lr_schedule, pretrain, TrainConfig};

fn main() -> anyhow::Result<()> {
    let mut args = std::env::args().skip(1);
    let epochs: usize = args.next().map(|s| s.parse()).transpose()?.unwrap_or(3);
    let out = args.next().unwrap_or_else(|| "mgf-out/pretrain".into());

    let corpus = synth_corpus(&SynthSpec::default())?;
    let cfg = TrainConfig {
        epochs,
        warmup_steps: 40,
        ..TrainConfig::desk()
    };
    let outcome = pretrain(&corpus, &EncoderConfig::desk(), &cfg, &NoiseBank::Synthetic, &out, false)?;
    for (i, r) in outcome.reports.iter().enumerate() {
        let step = i as u64 + 1;
        println!(
            "step {step:>4} lr {:.2e} sample {:8.3} frame {:9.3} phoneme {:6.3} sentence {:6.3} total {:9.3}",
            lr_schedule(step, &cfg),
            r.l_sample,
            r.l_frame,
            r.l_phoneme,
            r.l_sentence,
            r.l_total
        );
    }
    let points = outcome
        .reports
        .iter()
        .enumerate()
        .map(|(i, r)| (i as f64 + 1.0, r.l_total))
        .collect();
    let svg = line_chart_svg(
        &Chart {
            title: "Pretraining loss".into(),
            x_label: "step".into(),
            y_label: "total".into(),
            ..Chart::default()
        },
        &[Series {
            name: "l_total".into(),
            points,
        }],
    );
    let chart = std::path::Path::new(&out).join("train_loss.svg");
    std::fs::write(&chart, svg)?;
    println!("checkpoint {}", outcome.checkpoint.display());
    println!("chart {}", chart.display());
    Ok(())
}
