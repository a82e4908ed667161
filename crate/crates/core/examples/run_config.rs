//! Run configurations: the desk and paper presets and a JSON overlay.
//!
//! cargo run --release --example run_config

use mgf::config::{Preset, RunConfig};

fn main() -> anyhow::Result<()> {
    for preset in [Preset::Desk, Preset::Paper] {
        let cfg = RunConfig::preset(preset);
        println!(
            "{preset}: d_model {}, {} encoder blocks, batch {}, warmup {}, lr {}",
            cfg.encoder.d_model,
            cfg.encoder.encoder_blocks,
            cfg.train.batch_size,
            cfg.train.warmup_steps,
            cfg.train.base_lr
        );
    }
    let overlay = r#"{"train": {"epochs": 5, "weights": {"phoneme": 2.0}}}"#;
    let cfg = RunConfig::from_json(overlay)?;
    println!("overlay {overlay} gives epochs {} and weights {:?}", cfg.train.epochs, cfg.train.weights);
    match RunConfig::from_json(r#"{"train": {"epoch": 5}}"#) {
        Ok(_) => println!("unexpected: misspelled key accepted"),
        Err(e) => println!("misspelled key rejected: {e}"),
    }
    Ok(())
}
