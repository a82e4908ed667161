use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use super::{FeatureKind, FeatureMatrix, FrameGrid, Waveform, EPS_LOG};
use crate::error::{Error, Result};

/// Periodic Hann window.
pub fn hann_window(len: usize) -> Vec<f64> {
    if len == 1 {
        return vec![1.0];
    }
    (0..len)
        .map(|n| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * n as f64 / len as f64).cos())
        .collect()
}

/// Slices `wave` into Hann-windowed frames starting at multiples of `hop`.
pub fn frame_signal(wave: &Waveform, frame_len: usize, hop: usize) -> Result<FrameGrid> {
    if frame_len == 0 || hop == 0 {
        return Err(Error::InvalidArgument(
            "frame_len and hop must be >= 1".into(),
        ));
    }
    let x = wave.samples();
    if x.len() < frame_len {
        return Err(Error::InputTooShort {
            len: x.len(),
            need: frame_len,
        });
    }
    let n_frames = (x.len() - frame_len) / hop + 1;
    let window = hann_window(frame_len);
    let mut frames = Vec::with_capacity(n_frames * frame_len);
    for i in 0..n_frames {
        let start = i * hop;
        frames.extend(
            x[start..start + frame_len]
                .iter()
                .zip(&window)
                .map(|(s, w)| s * w),
        );
    }
    Ok(FrameGrid {
        frames,
        n_frames,
        frame_len,
        hop,
        sample_rate: wave.sample_rate(),
    })
}

/// Frames centred on the encoder grid: row `i` is centred on sample
/// `hop*i + hop/2` and the signal is zero-extended at both ends, giving
/// exactly `len / hop` rows.
pub fn frame_centered(wave: &Waveform, frame_len: usize, hop: usize) -> Result<FrameGrid> {
    if frame_len == 0 || hop == 0 {
        return Err(Error::InvalidArgument(
            "frame_len and hop must be >= 1".into(),
        ));
    }
    let x = wave.samples();
    let n_frames = x.len() / hop;
    if n_frames == 0 {
        return Err(Error::InputTooShort {
            len: x.len(),
            need: hop,
        });
    }
    let window = hann_window(frame_len);
    let mut frames = vec![0.0; n_frames * frame_len];
    for i in 0..n_frames {
        let start = (hop * i + hop / 2) as isize - (frame_len / 2) as isize;
        let row = &mut frames[i * frame_len..(i + 1) * frame_len];
        for (j, out) in row.iter_mut().enumerate() {
            let t = start + j as isize;
            if t >= 0 && (t as usize) < x.len() {
                *out = x[t as usize] * window[j];
            }
        }
    }
    Ok(FrameGrid {
        frames,
        n_frames,
        frame_len,
        hop,
        sample_rate: wave.sample_rate(),
    })
}

fn check_fft(grid: &FrameGrid, fft_size: usize) -> Result<()> {
    if !fft_size.is_power_of_two() {
        return Err(Error::InvalidArgument(format!(
            "fft_size {fft_size} is not a power of two"
        )));
    }
    if fft_size < grid.frame_len {
        return Err(Error::FftTooSmall {
            fft_size,
            frame_len: grid.frame_len,
        });
    }
    Ok(())
}

/// `|DFT|^2` over the first `fft_size/2 + 1` bins of every frame,
/// row-major `[n_frames × (fft_size/2+1)]`.
pub fn power_spectrum(grid: &FrameGrid, fft_size: usize) -> Result<Vec<f64>> {
    check_fft(grid, fft_size)?;
    let n_bins = fft_size / 2 + 1;
    let fft = FftPlanner::<f64>::new().plan_fft_forward(fft_size);
    let mut buf = vec![Complex::new(0.0, 0.0); fft_size];
    let mut scratch = vec![Complex::new(0.0, 0.0); fft.get_inplace_scratch_len()];
    let mut out = Vec::with_capacity(grid.n_frames * n_bins);
    for i in 0..grid.n_frames {
        for (b, &s) in buf.iter_mut().zip(grid.row(i)) {
            *b = Complex::new(s, 0.0);
        }
        for b in buf[grid.frame_len..].iter_mut() {
            *b = Complex::new(0.0, 0.0);
        }
        fft.process_with_scratch(&mut buf, &mut scratch);
        out.extend(buf[..n_bins].iter().map(|c| c.norm_sqr()));
    }
    Ok(out)
}

/// Direct O(n²) DFT power of one zero-padded frame. Reference path for
/// checking [`power_spectrum`].
pub fn dft_power_naive(frame: &[f64], fft_size: usize) -> Vec<f64> {
    let n_bins = fft_size / 2 + 1;
    (0..n_bins)
        .map(|k| {
            let (mut re, mut im) = (0.0, 0.0);
            for (t, &x) in frame.iter().enumerate() {
                let phase = -2.0 * std::f64::consts::PI * ((k * t) % fft_size) as f64
                    / fft_size as f64;
                re += x * phase.cos();
                im += x * phase.sin();
            }
            re * re + im * im
        })
        .collect()
}

/// `log(|DFT|^2 + EPS_LOG)` per frame.
pub fn log_power_spectrum(grid: &FrameGrid, fft_size: usize) -> Result<FeatureMatrix> {
    let power = power_spectrum(grid, fft_size)?;
    Ok(FeatureMatrix {
        values: power.into_iter().map(|p| (p + EPS_LOG).ln()).collect(),
        n_frames: grid.n_frames,
        n_dims: fft_size / 2 + 1,
        kind: FeatureKind::Lps,
        context_ms: context_ms(grid),
    })
}

/// Log power averaged over `n_bands` contiguous bin groups. Band 0 is the
/// DC bin alone; the remaining bins are split evenly. Used to keep the
/// long-context spectrum at the same width as the short one.
pub fn banded_log_power_spectrum(
    grid: &FrameGrid,
    fft_size: usize,
    n_bands: usize,
) -> Result<FeatureMatrix> {
    let n_bins = fft_size / 2 + 1;
    if n_bands < 2 || !(n_bins - 1).is_multiple_of(n_bands - 1) {
        return Err(Error::InvalidArgument(format!(
            "{n_bands} bands do not tile {n_bins} bins"
        )));
    }
    let group = (n_bins - 1) / (n_bands - 1);
    let power = power_spectrum(grid, fft_size)?;
    let mut values = Vec::with_capacity(grid.n_frames * n_bands);
    for row in power.chunks(n_bins) {
        values.push((row[0] + EPS_LOG).ln());
        for band in row[1..].chunks(group) {
            let mean = band.iter().sum::<f64>() / group as f64;
            values.push((mean + EPS_LOG).ln());
        }
    }
    Ok(FeatureMatrix {
        values,
        n_frames: grid.n_frames,
        n_dims: n_bands,
        kind: FeatureKind::Lps,
        context_ms: context_ms(grid),
    })
}

pub(crate) fn context_ms(grid: &FrameGrid) -> u32 {
    (grid.frame_len as f64 * 1000.0 / grid.sample_rate as f64).round() as u32
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::{EPS_LOG, HOP};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn wave(n: usize) -> Waveform {
        Waveform::from_samples((0..n).map(|i| ((i * 7919) % 101) as f64 / 101.0 - 0.5).collect())
            .unwrap()
    }

    #[test]
    fn frame_counts() {
        assert_eq!(frame_signal(&wave(32000), 400, 160).unwrap().n_frames, 198);
        assert_eq!(frame_signal(&wave(400), 400, 160).unwrap().n_frames, 1);
        assert!(matches!(
            frame_signal(&wave(399), 400, 160),
            Err(Error::InputTooShort { .. })
        ));
    }

    #[test]
    fn frame_rows_are_windowed_slices() {
        let w = wave(1000);
        let g = frame_signal(&w, 400, 160).unwrap();
        let win = hann_window(400);
        for i in 0..g.n_frames {
            for j in 0..400 {
                assert_eq!(g.row(i)[j], w.samples()[i * 160 + j] * win[j]);
            }
        }
        assert_eq!(g, frame_signal(&w, 400, 160).unwrap());
    }

    #[test]
    fn centred_grid_has_one_row_per_hop() {
        let g = frame_centered(&wave(32000), 6400, HOP).unwrap();
        assert_eq!(g.n_frames, 200);
        let g = frame_centered(&wave(32000), 400, HOP).unwrap();
        // Row 10 is centred on sample 1680, so it starts at 1480.
        let win = hann_window(400);
        assert_eq!(g.row(10)[5], wave(32000).samples()[1485] * win[5]);
    }

    #[test]
    fn silence_hits_the_floor() {
        let g = FrameGrid {
            frames: vec![0.0; 400],
            n_frames: 1,
            frame_len: 400,
            hop: 160,
            sample_rate: 16000,
        };
        let m = log_power_spectrum(&g, 512).unwrap();
        assert_eq!(m.n_dims, 257);
        assert!(m.values.iter().all(|&v| v == EPS_LOG.ln()));
    }

    #[test]
    fn impulse_is_flat() {
        let mut frames = vec![0.0; 400];
        frames[0] = 1.0;
        let g = FrameGrid {
            frames,
            n_frames: 1,
            frame_len: 400,
            hop: 160,
            sample_rate: 16000,
        };
        let m = log_power_spectrum(&g, 512).unwrap();
        for v in &m.values {
            assert!((v - (1.0 + EPS_LOG).ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn sine_peaks_at_expected_bin() {
        let x: Vec<f64> = (0..400)
            .map(|t| (2.0 * std::f64::consts::PI * 440.0 * t as f64 / 16000.0).sin())
            .collect();
        let w = Waveform::from_samples(x).unwrap();
        let g = frame_signal(&w, 400, 160).unwrap();
        let m = log_power_spectrum(&g, 512).unwrap();
        let argmax = |v: &[f64]| {
            v.iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1))
                .unwrap()
                .0
        };
        assert_eq!(argmax(&m.values), 14);
        let naive = dft_power_naive(g.row(0), 512);
        assert_eq!(argmax(&naive), 14);
    }

    #[test]
    fn fft_matches_direct_dft() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let frames: Vec<f64> = (0..400 * 5).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let g = FrameGrid {
            frames,
            n_frames: 5,
            frame_len: 400,
            hop: 160,
            sample_rate: 16000,
        };
        let fast = power_spectrum(&g, 512).unwrap();
        for i in 0..5 {
            let slow = dft_power_naive(g.row(i), 512);
            for (a, b) in fast[i * 257..(i + 1) * 257].iter().zip(&slow) {
                assert!((a - b).abs() <= 1e-6 * b.abs().max(1e-12));
            }
        }
    }

    #[test]
    fn fft_size_guards() {
        let g = frame_signal(&wave(1000), 400, 160).unwrap();
        assert!(matches!(
            log_power_spectrum(&g, 256),
            Err(Error::FftTooSmall { .. })
        ));
        assert!(log_power_spectrum(&g, 500).is_err());
    }

    #[test]
    fn banded_spectrum_width() {
        let g = frame_centered(&wave(3200), 6400, 160).unwrap();
        let m = banded_log_power_spectrum(&g, 8192, 257).unwrap();
        assert_eq!((m.n_frames, m.n_dims, m.context_ms), (20, 257, 400));
    }
}
