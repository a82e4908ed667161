//! Linear probes on frozen representations: a checkpoint against a
//! randomly initialised encoder.
//!
//! cargo run --release --example probe -- [checkpoint.mgf]
//! (run the pretrain example first for a checkpoint)

use mgf::corpus::{synth_corpus, SynthSpec};
use mgf::encoder::{EncoderConfig, MgfModel};
use mgf::probe::{checkpoint_id, model_fingerprint, run_probe, ProbeConfig, ProbeKind, ProbeTask};
use mgf::trainer::load_model;

fn main() -> anyhow::Result<()> {
    let ckpt = std::env::args()
        .nth(1)
        .unwrap_or_else(|| "mgf-out/pretrain/checkpoint.mgf".into());
    let corpus = synth_corpus(&SynthSpec::default())?;
    let random = MgfModel::new(EncoderConfig::desk(), 1)?;
    let mut models = vec![("random".to_string(), model_fingerprint(&random), random)];
    match load_model(&ckpt) {
        Ok(m) => models.push(("pretrained".to_string(), checkpoint_id(&ckpt)?, m)),
        Err(e) => eprintln!("no checkpoint at {ckpt} ({e}); probing the random encoder only"),
    }
    let cfg = ProbeConfig::default();
    for (name, id, model) in &models {
        for kind in ProbeKind::ALL {
            let task = ProbeTask::new(kind, 1.0, 0)?;
            let r = run_probe(model, id, &corpus, &task, &cfg, None)?;
            println!(
                "{name:<10} {:<17} accuracy {:.4} (train {}, test {})",
                kind.name(),
                r.accuracy,
                r.train_size,
                r.test_size
            );
        }
    }
    Ok(())
}
