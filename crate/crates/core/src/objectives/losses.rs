//! The four objectives, each in two forms: a differentiable tape version
//! used in training and a direct-summation version over plain vectors that
//! serves as its oracle.

use std::f64::consts::LN_10;

use crate::autodiff::{Array, Tape, Var};
use crate::dsp::{si_sdr_with_scale, FeatureMatrix, TargetKind, Waveform, EPS_SDR, SDR_CLAMP_DB};
use crate::error::{Error, Result};

use super::MaskPlan;

/// Added to excluded logits; `exp` of it underflows to exactly zero.
const EXCLUDED_LOGIT: f64 = -1e9;

/// Anchors, positives and `K` negatives per anchor for the phoneme loss.
#[derive(Debug, Clone, PartialEq)]
pub struct ContrastiveBatch {
    pub anchors: Vec<Vec<f64>>,
    pub positives: Vec<Vec<f64>>,
    pub negatives: Vec<Vec<Vec<f64>>>,
    pub tau: f64,
}

/// `2N` projections; `z[i]` and `z[i + N]` come from the same sentence.
#[derive(Debug, Clone, PartialEq)]
pub struct SentenceBatch {
    pub z: Vec<Vec<f64>>,
    pub tau: f64,
}

/// One frame-feature kind with its ground truth, prediction and weight.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameTerm {
    pub kind: TargetKind,
    pub target: FeatureMatrix,
    pub prediction: FeatureMatrix,
    pub weight: f64,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `-log(exp(l0) / Σ exp(l))` with max subtraction.
fn neg_log_softmax_first(logits: &[f64]) -> f64 {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = logits.iter().map(|l| (l - m).exp()).sum();
    -(logits[0] - m - z.ln())
}

/// Negative SI-SDR of `estimate` against `reference`, plus the scale α.
pub fn loss_sample(reference: &Waveform, estimate: &Waveform) -> Result<(f64, f64)> {
    let s = si_sdr_with_scale(reference.samples(), estimate.samples())?;
    Ok((-s.db, s.alpha))
}

/// Mean over unmasked frames of `Σ_h ω_h ‖u_h − û_h‖²`. Also returns each
/// kind's weighted share.
pub fn loss_frame(terms: &[FrameTerm], plan: &MaskPlan) -> Result<(f64, Vec<(TargetKind, f64)>)> {
    let frames = plan.unmasked_frames();
    if frames.is_empty() {
        return Err(Error::NoUnmaskedFrames);
    }
    let mut trace = Vec::with_capacity(terms.len());
    for t in terms {
        if t.target.n_frames != t.prediction.n_frames
            || t.target.n_dims != t.prediction.n_dims
            || t.target.n_frames != plan.n_frames
        {
            return Err(Error::shape(
                "loss_frame",
                format!("{} target/prediction/plan frame counts disagree", t.kind),
            ));
        }
        let sum: f64 = frames
            .iter()
            .map(|&f| {
                t.target
                    .row(f)
                    .iter()
                    .zip(t.prediction.row(f))
                    .map(|(u, v)| (u - v) * (u - v))
                    .sum::<f64>()
            })
            .sum();
        trace.push((t.kind, t.weight * sum / frames.len() as f64));
    }
    Ok((trace.iter().map(|(_, v)| v).sum(), trace))
}

/// Mean over anchors of the InfoNCE term with the positive included in
/// the denominator.
pub fn loss_phoneme(batch: &ContrastiveBatch) -> Result<f64> {
    let m = batch.anchors.len();
    if m == 0 || batch.positives.len() != m || batch.negatives.len() != m {
        return Err(Error::shape(
            "loss_phoneme",
            "anchor, positive and negative counts must match and be nonzero",
        ));
    }
    check_tau(batch.tau)?;
    let mut total = 0.0;
    for ((a, p), negs) in batch.anchors.iter().zip(&batch.positives).zip(&batch.negatives) {
        if negs.is_empty() {
            return Err(Error::NoNegatives);
        }
        let mut logits = vec![dot(a, p) / batch.tau];
        logits.extend(negs.iter().map(|n| dot(a, n) / batch.tau));
        total += neg_log_softmax_first(&logits);
    }
    Ok(total / m as f64)
}

/// Mean over all `2N` anchors of the NT-Xent term; the denominator runs
/// over the other `2N − 1` projections.
pub fn loss_sentence(batch: &SentenceBatch) -> Result<f64> {
    let two_n = batch.z.len();
    if !two_n.is_multiple_of(2) || two_n < 4 {
        return Err(Error::TooFewSentences(two_n / 2));
    }
    check_tau(batch.tau)?;
    let n = two_n / 2;
    let mut total = 0.0;
    for i in 0..two_n {
        let j = (i + n) % two_n;
        let mut logits = vec![dot(&batch.z[i], &batch.z[j]) / batch.tau];
        logits.extend(
            (0..two_n)
                .filter(|&k| k != i && k != j)
                .map(|k| dot(&batch.z[i], &batch.z[k]) / batch.tau),
        );
        total += neg_log_softmax_first(&logits);
    }
    Ok(total / two_n as f64)
}

/// Mean absolute difference between predicted and clean frame vectors.
pub fn loss_phoneme_generative(anchors: &[Vec<f64>], positives: &[Vec<f64>]) -> Result<f64> {
    let count: usize = anchors.iter().map(Vec::len).sum();
    if count == 0 || anchors.len() != positives.len() {
        return Err(Error::shape("loss_phoneme_generative", "empty or mismatched"));
    }
    let sum: f64 = anchors
        .iter()
        .zip(positives)
        .flat_map(|(a, p)| a.iter().zip(p).map(|(x, y)| (x - y).abs()))
        .sum();
    Ok(sum / count as f64)
}

fn check_tau(tau: f64) -> Result<()> {
    if tau > 0.0 && tau.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("temperature must be > 0, got {tau}")))
    }
}

/// Batched negative SI-SDR, averaged over rows. `clean` holds fixed
/// references `[B, L]`; `recon` is the decoder output. Returns the loss and
/// each row's α.
pub fn loss_sample_tape(tape: &mut Tape, clean: Var, recon: Var) -> Result<(Var, Vec<f64>)> {
    let shape = tape.shape(clean).to_vec();
    if shape.len() != 2 || tape.shape(recon) != shape.as_slice() {
        return Err(Error::shape(
            "loss_sample",
            format!("{shape:?} vs {:?}", tape.shape(recon)),
        ));
    }
    let b = shape[0];
    let sq = tape.mul(clean, clean)?;
    let energy = tape.sum_axis(sq, 1)?;
    if tape.value(energy).data().contains(&0.0) {
        return Err(Error::DegenerateReference);
    }
    let cross = tape.mul(clean, recon)?;
    let cross = tape.sum_axis(cross, 1)?;
    let alpha = tape.div(cross, energy)?;
    let alphas = tape.value(alpha).data().to_vec();
    let alpha = tape.reshape(alpha, &[b, 1])?;
    let target = tape.mul(alpha, clean)?;
    let err = tape.sub(target, recon)?;
    let t2 = tape.mul(target, target)?;
    let num = tape.sum_axis(t2, 1)?;
    let num = tape.clamp(num, EPS_SDR, f64::INFINITY)?;
    let e2 = tape.mul(err, err)?;
    let den = tape.sum_axis(e2, 1)?;
    let den = tape.clamp(den, EPS_SDR, f64::INFINITY)?;
    let ratio = tape.div(num, den)?;
    let ln = tape.log(ratio)?;
    let db = tape.scale(ln, 10.0 / LN_10)?;
    let db = tape.clamp(db, -SDR_CLAMP_DB, SDR_CLAMP_DB)?;
    let mean = tape.mean(db)?;
    Ok((tape.scale(mean, -1.0)?, alphas))
}

/// Frame regression over the frames where `unmasked` is set. Predictions
/// and targets are `[B, T, D_h]`; `unmasked` is row-major `[B, T]`.
pub fn loss_frame_tape(
    tape: &mut Tape,
    terms: &[(TargetKind, Var, Array, f64)],
    unmasked: &[bool],
) -> Result<(Var, Vec<(TargetKind, f64)>)> {
    let count = unmasked.iter().filter(|&&u| u).count();
    if count == 0 {
        return Err(Error::NoUnmaskedFrames);
    }
    if terms.is_empty() {
        return Err(Error::InvalidArgument("no frame-feature kinds".into()));
    }
    let mut total: Option<Var> = None;
    let mut trace = Vec::with_capacity(terms.len());
    for (kind, pred, target, weight) in terms {
        let shape = tape.shape(*pred).to_vec();
        if target.shape() != shape.as_slice() || shape[0] * shape[1] != unmasked.len() {
            return Err(Error::shape(
                "loss_frame",
                format!("{kind}: prediction {shape:?}, target {:?}", target.shape()),
            ));
        }
        let mask = Array::new(
            vec![shape[0], shape[1]],
            unmasked.iter().map(|&u| if u { 1.0 } else { 0.0 }).collect(),
        )?;
        let t = tape.constant(target.clone());
        let diff = tape.sub(*pred, t)?;
        let sq = tape.mul(diff, diff)?;
        let per_frame = tape.sum_axis(sq, 2)?;
        let m = tape.constant(mask);
        let kept = tape.mul(per_frame, m)?;
        let s = tape.sum(kept)?;
        let term = tape.scale(s, weight / count as f64)?;
        trace.push((*kind, tape.item(term)));
        total = Some(match total {
            None => term,
            Some(acc) => tape.add(acc, term)?,
        });
    }
    Ok((total.expect("at least one term"), trace))
}

/// InfoNCE over `anchors [M, d]`, `positives [M, d]`, `negatives [M, K, d]`.
pub fn loss_phoneme_tape(
    tape: &mut Tape,
    anchors: Var,
    positives: Var,
    negatives: Var,
    tau: f64,
) -> Result<Var> {
    check_tau(tau)?;
    let (m, d) = {
        let s = tape.shape(anchors);
        if s.len() != 2 || s[0] == 0 {
            return Err(Error::shape("loss_phoneme", format!("anchors {s:?}")));
        }
        (s[0], s[1])
    };
    let ns = tape.shape(negatives).to_vec();
    if ns.len() != 3 || ns[0] != m || ns[2] != d {
        return Err(Error::shape("loss_phoneme", format!("negatives {ns:?}")));
    }
    if ns[1] == 0 {
        return Err(Error::NoNegatives);
    }
    let k = ns[1];
    let ap = tape.mul(anchors, positives)?;
    let pos = tape.sum_axis(ap, 1)?;
    let pos = tape.reshape(pos, &[m, 1])?;
    let a3 = tape.reshape(anchors, &[m, 1, d])?;
    let nt = tape.permute(negatives, &[0, 2, 1])?;
    let neg = tape.matmul(a3, nt)?;
    let neg = tape.reshape(neg, &[m, k])?;
    let logits = tape.concat(&[pos, neg], 1)?;
    let logits = tape.scale(logits, 1.0 / tau)?;
    let ls = tape.log_softmax(logits, 1)?;
    let first = tape.slice(ls, 1, 0, 1)?;
    let mean = tape.mean(first)?;
    tape.scale(mean, -1.0)
}

/// NT-Xent over `z [2N, d]` with rows `i` and `i + N` paired.
pub fn loss_sentence_tape(tape: &mut Tape, z: Var, tau: f64) -> Result<Var> {
    check_tau(tau)?;
    let two_n = tape.shape(z)[0];
    if !two_n.is_multiple_of(2) || two_n < 4 {
        return Err(Error::TooFewSentences(two_n / 2));
    }
    let n = two_n / 2;
    let zt = tape.transpose(z)?;
    let sim = tape.matmul(z, zt)?;
    let sim = tape.scale(sim, 1.0 / tau)?;
    let mut diag = vec![0.0; two_n * two_n];
    let mut pick = vec![0.0; two_n * two_n];
    for i in 0..two_n {
        diag[i * two_n + i] = EXCLUDED_LOGIT;
        pick[i * two_n + (i + n) % two_n] = 1.0;
    }
    let diag = tape.constant(Array::new(vec![two_n, two_n], diag)?);
    let pick = tape.constant(Array::new(vec![two_n, two_n], pick)?);
    let logits = tape.add(sim, diag)?;
    let ls = tape.log_softmax(logits, 1)?;
    let chosen = tape.mul(ls, pick)?;
    let s = tape.sum(chosen)?;
    tape.scale(s, -1.0 / two_n as f64)
}

/// Mean absolute error between `[M, d]` anchors and positives.
pub fn loss_phoneme_generative_tape(tape: &mut Tape, anchors: Var, positives: Var) -> Result<Var> {
    let diff = tape.sub(anchors, positives)?;
    let a = tape.abs(diff)?;
    tape.mean(a)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{finite_diff_check, randn, GradCheckOptions};
    use crate::dsp::FeatureKind;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rows(a: &Array) -> Vec<Vec<f64>> {
        let d = *a.shape().last().unwrap();
        a.data().chunks(d).map(<[f64]>::to_vec).collect()
    }

    #[test]
    fn phoneme_uniform_and_hand_cases() {
        let v = vec![0.3, -0.2];
        let batch = ContrastiveBatch {
            anchors: vec![v.clone()],
            positives: vec![v.clone()],
            negatives: vec![vec![v.clone(); 32]],
            tau: 0.1,
        };
        assert!((loss_phoneme(&batch).unwrap() - 33f64.ln()).abs() < 1e-9);
        let hand = ContrastiveBatch {
            anchors: vec![vec![1.0, 0.0, 0.0]],
            positives: vec![vec![1.0, 0.0, 0.0]],
            negatives: vec![vec![vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]]],
            tau: 1.0,
        };
        let expect = -(1f64.exp() / (2.0 + 1f64.exp())).ln();
        assert!((loss_phoneme(&hand).unwrap() - expect).abs() < 1e-12);
        assert!((expect - 0.5514).abs() < 1e-4);
        let sharp = ContrastiveBatch {
            anchors: vec![vec![1e3]],
            positives: vec![vec![1e3]],
            negatives: vec![vec![vec![0.0]]],
            tau: 0.1,
        };
        assert!(loss_phoneme(&sharp).unwrap() < 1e-12);
        let none = ContrastiveBatch {
            negatives: vec![vec![]],
            ..hand
        };
        assert!(matches!(loss_phoneme(&none), Err(Error::NoNegatives)));
    }

    #[test]
    fn sentence_uniform_and_hand_cases() {
        let z = vec![vec![0.5, 0.5]; 4];
        let b = SentenceBatch { z, tau: 0.1 };
        assert!((loss_sentence(&b).unwrap() - 3f64.ln()).abs() < 1e-9);
        let e = |i: usize| {
            let mut v = vec![0.0; 2];
            v[i] = 1.0;
            v
        };
        let hand = SentenceBatch {
            z: vec![e(0), e(1), e(0), e(1)],
            tau: 1.0,
        };
        let expect = -(1f64.exp() / (1f64.exp() + 2.0)).ln();
        assert!((loss_sentence(&hand).unwrap() - expect).abs() < 1e-12);
        assert!(matches!(
            loss_sentence(&SentenceBatch { z: vec![e(0), e(0)], tau: 1.0 }),
            Err(Error::TooFewSentences(1))
        ));
    }

    #[test]
    fn sentence_orthogonal_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let z = rows(&randn(&mut rng, &[6, 2], 1.0));
        let (c, s) = (0.3f64.cos(), 0.3f64.sin());
        let rotated = z.iter().map(|v| vec![c * v[0] - s * v[1], s * v[0] + c * v[1]]).collect();
        let a = loss_sentence(&SentenceBatch { z, tau: 0.5 }).unwrap();
        let b = loss_sentence(&SentenceBatch { z: rotated, tau: 0.5 }).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn sample_cases() {
        let x = Waveform::from_samples(vec![1.0, 0.0]).unwrap();
        let y = Waveform::from_samples(vec![1.0, 1.0]).unwrap();
        let (l, alpha) = loss_sample(&x, &y).unwrap();
        assert_eq!((l, alpha), (0.0, 1.0));
        assert_eq!(loss_sample(&x, &x).unwrap().0, -100.0);
        let orth = Waveform::from_samples(vec![0.0, 1.0]).unwrap();
        assert_eq!(loss_sample(&x, &orth).unwrap().0, 100.0);
    }

    #[test]
    fn frame_cases() {
        let fm = |v: Vec<f64>| FeatureMatrix {
            n_frames: 1,
            n_dims: v.len(),
            values: v,
            kind: FeatureKind::Lps,
            context_ms: 25,
        };
        let plan = MaskPlan {
            n_frames: 1,
            segments: vec![],
            seed: 0,
            too_short: true,
        };
        let term = FrameTerm {
            kind: TargetKind::Lps25,
            target: fm(vec![1.0, 2.0]),
            prediction: fm(vec![0.0, 0.0]),
            weight: 1.0,
        };
        assert_eq!(loss_frame(std::slice::from_ref(&term), &plan).unwrap().0, 5.0);
        let perfect = FrameTerm {
            prediction: term.target.clone(),
            ..term.clone()
        };
        assert_eq!(loss_frame(&[perfect], &plan).unwrap().0, 0.0);
        let double = FrameTerm {
            weight: 2.0,
            ..term.clone()
        };
        assert_eq!(loss_frame(&[double], &plan).unwrap().1[0].1, 10.0);
        let all_masked = MaskPlan {
            n_frames: 14,
            segments: vec![(0, 14)],
            seed: 0,
            too_short: false,
        };
        assert!(matches!(
            loss_frame(&[], &all_masked),
            Err(Error::NoUnmaskedFrames)
        ));
    }

    #[test]
    fn tape_matches_direct_summation() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (m, k, d) = (5, 4, 3);
        let a = randn(&mut rng, &[m, d], 1.0);
        let p = randn(&mut rng, &[m, d], 1.0);
        let n = randn(&mut rng, &[m, k, d], 1.0);
        let mut t = Tape::new();
        let (av, pv, nv) = (t.constant(a.clone()), t.constant(p.clone()), t.constant(n.clone()));
        let l = loss_phoneme_tape(&mut t, av, pv, nv, 0.2).unwrap();
        let negs: Vec<Vec<Vec<f64>>> = rows(&n).chunks(k).map(<[Vec<f64>]>::to_vec).collect();
        let direct = loss_phoneme(&ContrastiveBatch {
            anchors: rows(&a),
            positives: rows(&p),
            negatives: negs,
            tau: 0.2,
        })
        .unwrap();
        assert!((t.item(l) - direct).abs() < 1e-12);

        let z = randn(&mut rng, &[6, 4], 1.0);
        let zv = t.constant(z.clone());
        let ls = loss_sentence_tape(&mut t, zv, 0.3).unwrap();
        let direct = loss_sentence(&SentenceBatch { z: rows(&z), tau: 0.3 }).unwrap();
        assert!((t.item(ls) - direct).abs() < 1e-12);

        let g = loss_phoneme_generative_tape(&mut t, av, pv).unwrap();
        let direct = loss_phoneme_generative(&rows(&a), &rows(&p)).unwrap();
        assert!((t.item(g) - direct).abs() < 1e-12);
    }

    #[test]
    fn sample_tape_matches_dsp() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = randn(&mut rng, &[2, 50], 1.0);
        let y = randn(&mut rng, &[2, 50], 1.0);
        let mut t = Tape::new();
        let (xv, yv) = (t.constant(x.clone()), t.constant(y.clone()));
        let (l, alphas) = loss_sample_tape(&mut t, xv, yv).unwrap();
        let mut expect = 0.0;
        for r in 0..2 {
            let s = si_sdr_with_scale(&x.data()[r * 50..][..50], &y.data()[r * 50..][..50]).unwrap();
            assert!((s.alpha - alphas[r]).abs() < 1e-12);
            expect -= s.db / 2.0;
        }
        assert!((t.item(l) - expect).abs() < 1e-10);
        let scaled = t.scale(yv, 7.5).unwrap();
        let (l2, _) = loss_sample_tape(&mut t, xv, scaled).unwrap();
        assert!((t.item(l2) - t.item(l)).abs() < 1e-6);
    }

    #[test]
    fn frame_tape_matches_direct() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let pred = randn(&mut rng, &[1, 20, 3], 1.0);
        let target = randn(&mut rng, &[1, 20, 3], 1.0);
        let plan = MaskPlan {
            n_frames: 20,
            segments: vec![(3, 17)],
            seed: 0,
            too_short: false,
        };
        let unmasked: Vec<bool> = plan.mask().iter().map(|m| !m).collect();
        let mut t = Tape::new();
        let pv = t.constant(pred.clone());
        let (l, _) =
            loss_frame_tape(&mut t, &[(TargetKind::Mfcc25, pv, target.clone(), 0.5)], &unmasked)
                .unwrap();
        let fm = |a: &Array| FeatureMatrix {
            values: a.data().to_vec(),
            n_frames: 20,
            n_dims: 3,
            kind: FeatureKind::Mfcc,
            context_ms: 25,
        };
        let term = FrameTerm {
            kind: TargetKind::Mfcc25,
            target: fm(&target),
            prediction: fm(&pred),
            weight: 0.5,
        };
        let direct = loss_frame(&[term], &plan).unwrap().0;
        assert!((t.item(l) - direct).abs() < 1e-12);
    }

    #[test]
    fn loss_gradients_pass_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let opts = GradCheckOptions::default();
        // unit-scale logits at tau = 0.1 keep every softmax weight resolvable
        let (m, k, d) = (4, 3, 5);
        let params = vec![
            randn(&mut rng, &[m, d], 0.2),
            randn(&mut rng, &[m, d], 0.2),
            randn(&mut rng, &[m, k, d], 0.2),
        ];
        let r = finite_diff_check(
            |t, v| loss_phoneme_tape(t, v[0], v[1], v[2], 0.1),
            &params,
            opts,
        )
        .unwrap();
        assert!(r.passes(1e-6), "{r:?}");

        let r = finite_diff_check(
            |t, v| loss_sentence_tape(t, v[0], 0.1),
            &[randn(&mut rng, &[6, 4], 0.2)],
            opts,
        )
        .unwrap();
        assert!(r.passes(1e-6), "{r:?}");

        let clean = randn(&mut rng, &[2, 30], 1.0);
        let r = finite_diff_check(
            |t, v| {
                let c = t.constant(clean.clone());
                loss_sample_tape(t, c, v[0]).map(|(l, _)| l)
            },
            &[randn(&mut rng, &[2, 30], 1.0)],
            opts,
        )
        .unwrap();
        assert!(r.passes(1e-6), "{r:?}");

        let target = randn(&mut rng, &[2, 6, 3], 1.0);
        let unmasked: Vec<bool> = (0..12).map(|i| i % 3 != 0).collect();
        let r = finite_diff_check(
            |t, v| {
                loss_frame_tape(t, &[(TargetKind::Lps25, v[0], target.clone(), 1.5)], &unmasked)
                    .map(|(l, _)| l)
            },
            &[randn(&mut rng, &[2, 6, 3], 1.0)],
            opts,
        )
        .unwrap();
        assert!(r.passes(1e-6), "{r:?}");

        let r = finite_diff_check(
            |t, v| loss_phoneme_generative_tape(t, v[0], v[1]),
            &[randn(&mut rng, &[3, 4], 1.0), randn(&mut rng, &[3, 4], 1.0)],
            opts,
        )
        .unwrap();
        assert!(r.passes(1e-6), "{r:?}");
    }
}
