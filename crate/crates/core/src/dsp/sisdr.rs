use super::{Waveform, EPS_SDR, SDR_CLAMP_DB};
use crate::error::{Error, Result};

/// SI-SDR value together with the optimal scaling of the reference.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SiSdr {
    pub db: f64,
    pub alpha: f64,
}

/// Scale-invariant SDR of `estimate` against `reference`, in dB.
pub fn si_sdr(reference: &Waveform, estimate: &Waveform) -> Result<f64> {
    si_sdr_with_scale(reference.samples(), estimate.samples()).map(|s| s.db)
}

/// `alpha = <x̄, x> / |x|²`, then `10 log10(|αx|² / max(|αx − x̄|², EPS_SDR))`
/// clamped to ±[`SDR_CLAMP_DB`].
pub fn si_sdr_with_scale(reference: &[f64], estimate: &[f64]) -> Result<SiSdr> {
    if reference.len() != estimate.len() {
        return Err(Error::LengthMismatch(reference.len(), estimate.len()));
    }
    let energy: f64 = reference.iter().map(|x| x * x).sum();
    if energy == 0.0 {
        return Err(Error::DegenerateReference);
    }
    let alpha = reference
        .iter()
        .zip(estimate)
        .map(|(x, y)| x * y)
        .sum::<f64>()
        / energy;
    let target = alpha * alpha * energy;
    let distortion: f64 = reference
        .iter()
        .zip(estimate)
        .map(|(x, y)| {
            let e = alpha * x - y;
            e * e
        })
        .sum();
    let db = if target == 0.0 {
        -SDR_CLAMP_DB
    } else {
        10.0 * (target / distortion.max(EPS_SDR)).log10()
    };
    Ok(SiSdr {
        db: db.clamp(-SDR_CLAMP_DB, SDR_CLAMP_DB),
        alpha,
    })
}
