use super::spectrum::{context_ms, power_spectrum};
use super::{FeatureKind, FeatureMatrix, FrameGrid, EPS_LOG};
use crate::error::{Error, Result};

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular mel filters, row-major `[n_mels × (fft_size/2+1)]`.
///
/// Filter `m` rises linearly from mel point `m` to `m+1` and falls to
/// `m+2`, with points spaced evenly on the mel scale between 0 Hz and
/// Nyquist. A filter too narrow to cover any bin gets unit weight on the
/// bin nearest its centre so every row has positive mass.
pub fn mel_filterbank(n_mels: usize, fft_size: usize, sample_rate: u32) -> Result<Vec<f64>> {
    if n_mels < 2 {
        return Err(Error::InvalidArgument("n_mels must be >= 2".into()));
    }
    if fft_size < 2 {
        return Err(Error::InvalidArgument("fft_size must be >= 2".into()));
    }
    let n_bins = fft_size / 2 + 1;
    let nyquist = sample_rate as f64 / 2.0;
    let top = hz_to_mel(nyquist);
    let points: Vec<f64> = (0..n_mels + 2)
        .map(|i| mel_to_hz(top * i as f64 / (n_mels + 1) as f64))
        .collect();
    let bin_hz = sample_rate as f64 / fft_size as f64;
    let mut fb = vec![0.0; n_mels * n_bins];
    for m in 0..n_mels {
        let (lo, centre, hi) = (points[m], points[m + 1], points[m + 2]);
        let row = &mut fb[m * n_bins..(m + 1) * n_bins];
        for (k, w) in row.iter_mut().enumerate() {
            let f = k as f64 * bin_hz;
            let rise = (f - lo) / (centre - lo);
            let fall = (hi - f) / (hi - centre);
            *w = rise.min(fall).max(0.0);
        }
        if row.iter().sum::<f64>() <= 0.0 {
            let k = ((centre / bin_hz).round() as usize).min(n_bins - 1);
            row[k] = 1.0;
        }
    }
    Ok(fb)
}

/// Orthonormal DCT-II basis, row-major `[n × n]`; row `k` is basis vector `k`.
pub fn dct_matrix(n: usize) -> Vec<f64> {
    let mut d = vec![0.0; n * n];
    for k in 0..n {
        let scale = if k == 0 {
            (1.0 / n as f64).sqrt()
        } else {
            (2.0 / n as f64).sqrt()
        };
        for i in 0..n {
            d[k * n + i] = scale
                * (std::f64::consts::PI * k as f64 * (2 * i + 1) as f64 / (2 * n) as f64).cos();
        }
    }
    d
}

/// MFCCs from a precomputed power spectrum `[n_frames × (fft_size/2+1)]`.
pub fn mfcc_from_power(
    power: &[f64],
    fft_size: usize,
    sample_rate: u32,
    n_mels: usize,
    n_ceps: usize,
) -> Result<Vec<f64>> {
    if n_ceps > n_mels {
        return Err(Error::InvalidArgument(format!(
            "n_ceps {n_ceps} exceeds n_mels {n_mels}"
        )));
    }
    let n_bins = fft_size / 2 + 1;
    let fb = mel_filterbank(n_mels, fft_size, sample_rate)?;
    let dct = dct_matrix(n_mels);
    let mut out = Vec::with_capacity(power.len() / n_bins * n_ceps);
    let mut log_mel = vec![0.0; n_mels];
    for row in power.chunks(n_bins) {
        for (m, lm) in log_mel.iter_mut().enumerate() {
            let e: f64 = fb[m * n_bins..(m + 1) * n_bins]
                .iter()
                .zip(row)
                .map(|(w, p)| w * p)
                .sum();
            *lm = (e + EPS_LOG).ln();
        }
        for k in 0..n_ceps {
            out.push(
                dct[k * n_mels..(k + 1) * n_mels]
                    .iter()
                    .zip(&log_mel)
                    .map(|(d, l)| d * l)
                    .sum(),
            );
        }
    }
    Ok(out)
}

/// Orthonormal DCT-II of log mel energies; the first `n_ceps` coefficients
/// per frame. The FFT size is the smallest power of two covering a frame.
pub fn mfcc(grid: &FrameGrid, n_mels: usize, n_ceps: usize) -> Result<FeatureMatrix> {
    let fft_size = grid.frame_len.next_power_of_two();
    let power = power_spectrum(grid, fft_size)?;
    let values = mfcc_from_power(&power, fft_size, grid.sample_rate, n_mels, n_ceps)?;
    Ok(FeatureMatrix {
        values,
        n_frames: grid.n_frames,
        n_dims: n_ceps,
        kind: FeatureKind::Mfcc,
        context_ms: context_ms(grid),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn filterbank_shape_and_mass() {
        let fb = mel_filterbank(40, 512, 16000).unwrap();
        assert_eq!(fb.len(), 40 * 257);
        for row in fb.chunks(257) {
            assert!(row.iter().all(|&w| w >= 0.0));
            assert!(row.iter().sum::<f64>() > 0.0);
            // unimodal: non-decreasing up to the peak, non-increasing after
            let peak = row
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1))
                .unwrap()
                .0;
            assert!(row[..=peak].windows(2).all(|w| w[0] <= w[1]));
            assert!(row[peak..].windows(2).all(|w| w[0] >= w[1]));
        }
    }

    #[test]
    fn adjacent_filters_overlap() {
        let fb = mel_filterbank(40, 512, 16000).unwrap();
        for m in 0..39 {
            let a = &fb[m * 257..(m + 1) * 257];
            let b = &fb[(m + 1) * 257..(m + 2) * 257];
            assert!(a.iter().zip(b).any(|(x, y)| *x > 0.0 && *y > 0.0), "filter {m}");
        }
    }

    #[test]
    fn centres_increase_like_closed_form() {
        let top = hz_to_mel(8000.0);
        let centres: Vec<f64> = (1..=40).map(|i| mel_to_hz(top * i as f64 / 41.0)).collect();
        assert!(centres.windows(2).all(|w| w[0] < w[1]));
        // weighted mean frequency of each filter tracks its closed-form centre
        let fb = mel_filterbank(40, 8192, 16000).unwrap();
        let mut prev = 0.0;
        for (m, row) in fb.chunks(4097).enumerate() {
            let mass: f64 = row.iter().sum();
            let mean_hz =
                row.iter().enumerate().map(|(k, w)| k as f64 * 16000.0 / 8192.0 * w).sum::<f64>()
                    / mass;
            assert!(mean_hz > prev);
            prev = mean_hz;
            let lo = if m == 0 { 0.0 } else { centres[m - 1] };
            let hi = centres.get(m + 1).copied().unwrap_or(8000.0);
            assert!(mean_hz > lo && mean_hz < hi);
        }
        assert!((mel_to_hz(hz_to_mel(1234.5)) - 1234.5).abs() < 1e-9);
    }

    #[test]
    fn dct_is_orthonormal() {
        let n = 40;
        let d = dct_matrix(n);
        for a in 0..n {
            for b in 0..n {
                let dot: f64 = (0..n).map(|i| d[a * n + i] * d[b * n + i]).sum();
                let want = if a == b { 1.0 } else { 0.0 };
                assert!((dot - want).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn dct_of_constant() {
        let n = 40;
        let d = dct_matrix(n);
        let c = -3.25;
        for k in 0..n {
            let coef: f64 = (0..n).map(|i| d[k * n + i] * c).sum();
            let want = if k == 0 { c * (n as f64).sqrt() } else { 0.0 };
            assert!((coef - want).abs() < 1e-10);
        }
    }

    #[test]
    fn dct_matches_naive_sum_and_preserves_norm() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 40;
        let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let d = dct_matrix(n);
        let mut energy = 0.0;
        for k in 0..n {
            let fast: f64 = (0..n).map(|i| d[k * n + i] * x[i]).sum();
            let mut naive = 0.0;
            for (i, xi) in x.iter().enumerate() {
                naive += xi
                    * (std::f64::consts::PI / n as f64 * (i as f64 + 0.5) * k as f64).cos();
            }
            naive *= if k == 0 {
                (1.0 / n as f64).sqrt()
            } else {
                (2.0 / n as f64).sqrt()
            };
            assert!((fast - naive).abs() < 1e-9);
            energy += fast * fast;
        }
        let input: f64 = x.iter().map(|v| v * v).sum();
        assert!((energy - input).abs() < 1e-9 * input);
    }

    #[test]
    fn mfcc_shape() {
        let frames: Vec<f64> = (0..800).map(|i| ((i % 37) as f64 - 18.0) / 40.0).collect();
        let g = FrameGrid {
            frames,
            n_frames: 2,
            frame_len: 400,
            hop: 160,
            sample_rate: 16000,
        };
        let m = mfcc(&g, 40, 13).unwrap();
        assert_eq!((m.n_frames, m.n_dims, m.context_ms), (2, 13, 25));
        assert!(mfcc(&g, 10, 13).is_err());
    }
}
