//! Data-efficiency sweep: frame-class accuracy against label fraction when
//! fine-tuning from a checkpoint and from scratch.
//!
//! cargo run --release --example sweep -- [checkpoint.mgf] [out_dir]

use mgf::corpus::{synth_corpus, SynthSpec};
use mgf::encoder::{EncoderConfig, MgfModel};
use mgf::plot::{line_chart_svg, Chart, Series};
use mgf::probe::{checkpoint_id, data_efficiency_sweep, model_fingerprint, sweep_csv, SweepConfig, SweepMode};
use mgf::trainer::load_model;

fn main() -> anyhow::Result<()> {
    let mut args = std::env::args().skip(1);
    let ckpt = args
        .next()
        .unwrap_or_else(|| "mgf-out/pretrain/checkpoint.mgf".into());
    let out = std::path::PathBuf::from(args.next().unwrap_or_else(|| "mgf-out/sweep".into()));
    let corpus = synth_corpus(&SynthSpec::default())?;
    let (model, id) = match load_model(&ckpt) {
        Ok(m) => (m, checkpoint_id(&ckpt)?),
        Err(e) => {
            eprintln!("no checkpoint at {ckpt} ({e}); sweeping a random encoder");
            let m = MgfModel::new(EncoderConfig::desk(), 1)?;
            let id = model_fingerprint(&m);
            (m, id)
        }
    };
    let mut cfg = SweepConfig {
        fractions: vec![0.01, 0.1, 1.0],
        ..SweepConfig::default()
    };
    cfg.finetune.epochs = 3;
    let rows = data_efficiency_sweep(&model, &id, &corpus, &cfg, None)?;
    let csv = sweep_csv(&rows, "synthetic:seed=0");
    print!("{csv}");

    let series: Vec<Series> = SweepMode::ALL
        .iter()
        .map(|&mode| Series {
            name: mode.name().into(),
            points: rows
                .iter()
                .filter(|r| r.mode == mode)
                .map(|r| (r.fraction, r.accuracy))
                .collect(),
        })
        .collect();
    std::fs::create_dir_all(&out)?;
    std::fs::write(out.join("sweep.csv"), csv)?;
    std::fs::write(
        out.join("sweep.svg"),
        line_chart_svg(
            &Chart {
                title: "Fine-tuned frame-class accuracy".into(),
                x_label: "label fraction".into(),
                y_label: "accuracy".into(),
                log_x: true,
                ..Chart::default()
            },
            &series,
        ),
    )?;
    println!("wrote {}", out.join("sweep.svg").display());
    Ok(())
}
