use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{noise_sample, NoiseBank};
use crate::dsp::{Waveform, HOP};
use crate::error::{Error, Result};
use crate::seeds::{derive_seed, rng_for};

/// 140 ms at the 10 ms frame rate.
pub const SEGMENT_FRAMES: usize = 14;
/// Upper bound on the masked fraction of a crop.
pub const MASK_BUDGET: f64 = 0.20;
/// Rejected placements tolerated before the planner gives up.
pub const MAX_PLACEMENT_FAILURES: usize = 100;

const STREAM_PLAN: u64 = 0x6d61_736b;
const STREAM_FILL: u64 = 0x6669_6c6c;

/// What masked waveform segments are replaced with.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskFill {
    #[default]
    Noise,
    Zeros,
}

/// Masked segments of a crop, in frames.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct MaskPlan {
    pub n_frames: usize,
    /// Sorted half-open `[start, start + 14)` intervals.
    pub segments: Vec<(usize, usize)>,
    pub seed: u64,
    /// Set when the crop is shorter than one segment.
    pub too_short: bool,
}

impl MaskPlan {
    /// Per-frame flag, `true` when masked.
    pub fn mask(&self) -> Vec<bool> {
        let mut m = vec![false; self.n_frames];
        for &(s, e) in &self.segments {
            m[s..e].iter_mut().for_each(|x| *x = true);
        }
        m
    }

    pub fn masked_frames(&self) -> Vec<usize> {
        self.segments.iter().flat_map(|&(s, e)| s..e).collect()
    }

    pub fn unmasked_frames(&self) -> Vec<usize> {
        let m = self.mask();
        (0..self.n_frames).filter(|&i| !m[i]).collect()
    }

    pub fn coverage(&self) -> f64 {
        if self.n_frames == 0 {
            return 0.0;
        }
        self.masked_frames().len() as f64 / self.n_frames as f64
    }
}

/// Segment length, coverage budget and placement retry limit of the mask
/// planner.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MaskSpec {
    pub segment_frames: usize,
    pub budget: f64,
    pub max_failures: usize,
}

impl Default for MaskSpec {
    fn default() -> Self {
        Self {
            segment_frames: SEGMENT_FRAMES,
            budget: MASK_BUDGET,
            max_failures: MAX_PLACEMENT_FAILURES,
        }
    }
}

impl MaskSpec {
    pub fn validate(&self) -> Result<()> {
        if self.segment_frames == 0 {
            return Err(Error::Config("mask segment_frames must be >= 1".into()));
        }
        if !(self.budget >= 0.0 && self.budget < 1.0) {
            return Err(Error::Config("mask budget must lie in [0, 1)".into()));
        }
        Ok(())
    }

    /// Largest number of masked frames allowed in a crop of `n_frames`.
    fn frame_budget(&self, n_frames: usize) -> usize {
        // tolerance keeps 0.2 * 70 from rounding below 14
        (self.budget * n_frames as f64 + 1e-9).floor() as usize
    }
}

/// Places disjoint 14-frame segments at uniform starts until another would
/// exceed the 20 % budget or placement has failed 100 times. Segments may
/// abut.
pub fn plan_masks(n_frames: usize, seed: u64) -> MaskPlan {
    plan_masks_with(n_frames, seed, &MaskSpec::default())
}

/// [`plan_masks`] with the constants taken from `spec`.
pub fn plan_masks_with(n_frames: usize, seed: u64, spec: &MaskSpec) -> MaskPlan {
    let seg = spec.segment_frames.max(1);
    let mut plan = MaskPlan {
        n_frames,
        segments: Vec::new(),
        seed,
        too_short: n_frames < seg,
    };
    if plan.too_short {
        log::warn!("{n_frames} frames is shorter than one mask segment; nothing masked");
        return plan;
    }
    let budget = spec.frame_budget(n_frames);
    let mut rng = rng_for(seed, STREAM_PLAN, n_frames as u64);
    let mut failures = 0;
    while (plan.segments.len() + 1) * seg <= budget && failures < spec.max_failures {
        let start = rng.gen_range(0..=n_frames - seg);
        let end = start + seg;
        if plan.segments.iter().any(|&(s, e)| start < e && s < end) {
            failures += 1;
            continue;
        }
        plan.segments.push((start, end));
    }
    plan.segments.sort_unstable();
    plan
}

/// Replaces the samples under each segment with noise (or zeros); every
/// other sample is copied unchanged.
pub fn apply_masks(
    crop: &Waveform,
    plan: &MaskPlan,
    bank: &NoiseBank,
    fill: MaskFill,
    seed: u64,
) -> Result<Waveform> {
    let mut samples = crop.samples().to_vec();
    for (i, &(s, e)) in plan.segments.iter().enumerate() {
        let (a, b) = (s * HOP, e * HOP);
        if b > samples.len() {
            return Err(Error::InvalidArgument(format!(
                "mask segment [{s}, {e}) exceeds crop of {} samples",
                samples.len()
            )));
        }
        match fill {
            MaskFill::Zeros => samples[a..b].iter_mut().for_each(|x| *x = 0.0),
            MaskFill::Noise => {
                let noise = noise_sample(bank, b - a, derive_seed(seed, STREAM_FILL, i as u64))?;
                samples[a..b].copy_from_slice(noise.samples());
            }
        }
    }
    Waveform::new(samples, crop.sample_rate())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn segment_counts() {
        assert_eq!(plan_masks(200, 0).segments.len(), 2);
        assert_eq!(plan_masks(70, 0).segments.len(), 1);
        assert_eq!(plan_masks(69, 0).segments.len(), 0);
        let short = plan_masks(13, 0);
        assert!(short.too_short && short.segments.is_empty());
        assert_eq!(plan_masks(200, 5), plan_masks(200, 5));
    }

    #[test]
    fn sets_partition_frames() {
        let p = plan_masks(300, 9);
        let (v, u) = (p.masked_frames(), p.unmasked_frames());
        assert_eq!(v.len() + u.len(), 300);
        assert!(v.iter().all(|i| !u.contains(i)));
        assert!((p.coverage() - v.len() as f64 / 300.0).abs() < 1e-15);
    }

    #[test]
    fn apply_touches_only_masked_samples() {
        let crop = Waveform::from_samples((0..32000).map(|i| (i as f64 * 0.01).sin()).collect())
            .unwrap();
        let plan = plan_masks(200, 3);
        let out = apply_masks(&crop, &plan, &NoiseBank::Synthetic, MaskFill::Noise, 1).unwrap();
        let changed = crop
            .samples()
            .iter()
            .zip(out.samples())
            .filter(|(a, b)| a != b)
            .count();
        assert_eq!(changed, 4480);
        let empty = MaskPlan {
            segments: vec![],
            ..plan.clone()
        };
        let same = apply_masks(&crop, &empty, &NoiseBank::Synthetic, MaskFill::Noise, 1).unwrap();
        assert_eq!(same, crop);
        let zeros = apply_masks(&crop, &plan, &NoiseBank::Synthetic, MaskFill::Zeros, 1).unwrap();
        let (s, _) = plan.segments[0];
        assert!(zeros.samples()[s * HOP..(s + 14) * HOP].iter().all(|&x| x == 0.0));
        let no_clips = NoiseBank::Clips(vec![]);
        assert!(matches!(
            apply_masks(&crop, &plan, &no_clips, MaskFill::Noise, 1),
            Err(Error::NoNoise)
        ));
    }

    #[test]
    fn default_spec_matches_plan_masks() {
        for n in [13, 14, 69, 70, 200, 333] {
            assert_eq!(plan_masks(n, 4), plan_masks_with(n, 4, &MaskSpec::default()));
        }
        for n in 1..2000 {
            assert_eq!(MaskSpec::default().frame_budget(n), n / 5, "{n}");
        }
    }

    #[test]
    fn custom_spec_changes_segments() {
        let spec = MaskSpec {
            segment_frames: 10,
            budget: 0.5,
            max_failures: 1000,
        };
        let p = plan_masks_with(200, 1, &spec);
        assert!(p.segments.iter().all(|&(s, e)| e - s == 10));
        assert!(p.segments.len() <= 10);
        assert!((p.coverage() - p.segments.len() as f64 * 10.0 / 200.0).abs() < 1e-15);
        assert!(MaskSpec { budget: 1.0, ..spec }.validate().is_err());
        assert!(MaskSpec { segment_frames: 0, ..spec }.validate().is_err());
    }

    proptest! {
        #[test]
        fn budget_and_disjointness(n in 14usize..600, seed in any::<u64>()) {
            let p = plan_masks(n, seed);
            prop_assert!(p.segments.len() * SEGMENT_FRAMES <= n / 5);
            for w in p.segments.windows(2) {
                prop_assert!(w[0].1 <= w[1].0);
            }
            for &(s, e) in &p.segments {
                prop_assert_eq!(e - s, SEGMENT_FRAMES);
                prop_assert!(e <= n);
            }
        }
    }
}
