//! Finite-difference check of every autodiff primitive and of the full
//! weighted pretraining loss on a tiny model.
//!
//! cargo run --release --example gradcheck

use std::time::Instant;

use mgf::autodiff::primitive_gradchecks;
use mgf::encoder::EncoderConfig;
use mgf::trainer::full_loss_gradcheck;

fn main() -> anyhow::Result<()> {
    let t = Instant::now();
    for (name, r) in primitive_gradchecks(0)? {
        println!("{name:<24} {:.2e} ({} coords)", r.max_rel_error, r.checked);
    }
    let full = full_loss_gradcheck(&EncoderConfig::tiny(), 0, 6)?;
    println!(
        "full loss: max relative error {:.2e} over {} coords ({} skipped at kinks)",
        full.max_rel_error, full.checked, full.skipped_nonsmooth
    );
    println!("{:.1}s", t.elapsed().as_secs_f64());
    anyhow::ensure!(full.passes(1e-4), "full-loss gradient check failed");
    Ok(())
}
