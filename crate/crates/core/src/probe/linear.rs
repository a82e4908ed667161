use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seeds::rng_for;
use crate::trainer::{ADAM_EPS, BETA1, BETA2};

const STREAM_PROBE: u64 = 0x7072_6f62;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    /// Share of each speaker's utterances held out for testing.
    pub test_fraction: f64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            lr: 1e-2,
            batch_size: 256,
            test_fraction: 0.2,
        }
    }
}

/// Row-major feature matrix with one class label per row.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LabeledSet {
    pub x: Vec<f64>,
    pub dim: usize,
    pub y: Vec<usize>,
}

impl LabeledSet {
    pub fn new(dim: usize) -> Self {
        Self {
            x: Vec::new(),
            dim,
            y: Vec::new(),
        }
    }

    pub fn push(&mut self, row: &[f64], label: usize) {
        debug_assert_eq!(row.len(), self.dim);
        self.x.extend_from_slice(row);
        self.y.push(label);
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.dim..(i + 1) * self.dim]
    }

    pub fn subset(&self, idx: &[usize]) -> Self {
        let mut out = Self::new(self.dim);
        for &i in idx {
            out.push(self.row(i), self.y[i]);
        }
        out
    }
}

/// Outcome of one probe.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProbeResult {
    pub accuracy: f64,
    /// `None` for classes absent from the test set.
    pub per_class_accuracy: Vec<Option<f64>>,
    pub train_size: usize,
    pub test_size: usize,
    pub checkpoint_id: String,
}

/// Affine softmax classifier over standardized features.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearProbe {
    pub dim: usize,
    pub n_classes: usize,
    /// `[dim × n_classes]`.
    pub w: Vec<f64>,
    pub b: Vec<f64>,
    mean: Vec<f64>,
    std: Vec<f64>,
}

fn softmax_in_place(z: &mut [f64]) {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for v in z.iter_mut() {
        *v = (*v - m).exp();
        s += *v;
    }
    z.iter_mut().for_each(|v| *v /= s);
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]], lr: f64) {
        self.t += 1;
        let (c1, c2) = (1.0 - BETA1.powi(self.t), 1.0 - BETA2.powi(self.t));
        let mut k = 0;
        for (p, g) in params.iter_mut().zip(grads) {
            for (w, &g) in p.iter_mut().zip(g.iter()) {
                let (m, v) = (&mut self.m[k], &mut self.v[k]);
                *m = BETA1 * *m + (1.0 - BETA1) * g;
                *v = BETA2 * *v + (1.0 - BETA2) * g * g;
                *w -= lr * (*m / c1) / ((*v / c2).sqrt() + ADAM_EPS);
                k += 1;
            }
        }
    }
}

impl LinearProbe {
    /// Minibatch Adam on softmax cross-entropy for `cfg.epochs` epochs.
    pub fn fit(train: &LabeledSet, n_classes: usize, cfg: &ProbeConfig, seed: u64) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::DegenerateSplit("empty training set".into()));
        }
        let mut seen = vec![false; n_classes];
        for &y in &train.y {
            if y >= n_classes {
                return Err(Error::InvalidArgument(format!(
                    "label {y} out of range for {n_classes} classes"
                )));
            }
            seen[y] = true;
        }
        if seen.iter().filter(|&&s| s).count() < 2 {
            return Err(Error::DegenerateSplit(
                "training labels contain a single class; accuracy would be trivially 1.0".into(),
            ));
        }
        let (d, c, n) = (train.dim, n_classes, train.len());
        let mut mean = vec![0.0; d];
        let mut sq = vec![0.0; d];
        for i in 0..n {
            for (j, &x) in train.row(i).iter().enumerate() {
                mean[j] += x;
                sq[j] += x * x;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let std = sq
            .iter()
            .zip(&mean)
            .map(|(q, m)| (q / n as f64 - m * m).max(0.0).sqrt().max(1e-8))
            .collect();
        let mut probe = Self {
            dim: d,
            n_classes: c,
            w: vec![0.0; d * c],
            b: vec![0.0; c],
            mean,
            std,
        };
        let xs: Vec<f64> = (0..n).flat_map(|i| probe.standardize(train.row(i))).collect();
        let mut adam = Adam::new(d * c + c);
        let mut order: Vec<usize> = (0..n).collect();
        let mut gw = vec![0.0; d * c];
        let mut gb = vec![0.0; c];
        let mut z = vec![0.0; c];
        for epoch in 0..cfg.epochs {
            order.shuffle(&mut rng_for(seed, STREAM_PROBE, epoch as u64));
            for batch in order.chunks(cfg.batch_size.max(1)) {
                gw.iter_mut().for_each(|g| *g = 0.0);
                gb.iter_mut().for_each(|g| *g = 0.0);
                let scale = 1.0 / batch.len() as f64;
                for &i in batch {
                    let x = &xs[i * d..(i + 1) * d];
                    probe.raw_logits(x, &mut z);
                    softmax_in_place(&mut z);
                    z[train.y[i]] -= 1.0;
                    for (k, &xk) in x.iter().enumerate() {
                        let row = &mut gw[k * c..(k + 1) * c];
                        for (g, &dz) in row.iter_mut().zip(&z) {
                            *g += xk * dz * scale;
                        }
                    }
                    for (g, &dz) in gb.iter_mut().zip(&z) {
                        *g += dz * scale;
                    }
                }
                adam.step(&mut [&mut probe.w, &mut probe.b], &[&gw, &gb], cfg.lr);
            }
        }
        Ok(probe)
    }

    fn standardize(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.mean)
            .zip(&self.std)
            .map(|((v, m), s)| (v - m) / s)
            .collect()
    }

    fn raw_logits(&self, x: &[f64], z: &mut [f64]) {
        z.copy_from_slice(&self.b);
        for (k, &xk) in x.iter().enumerate() {
            for (zc, &w) in z.iter_mut().zip(&self.w[k * self.n_classes..]) {
                *zc += xk * w;
            }
        }
    }

    pub fn predict(&self, x: &[f64]) -> usize {
        let mut z = vec![0.0; self.n_classes];
        self.raw_logits(&self.standardize(x), &mut z);
        // first maximum wins ties
        let mut best = 0;
        for (i, &v) in z.iter().enumerate() {
            if v > z[best] {
                best = i;
            }
        }
        best
    }

    /// Overall and per-class accuracy on `set`.
    pub fn evaluate(&self, set: &LabeledSet) -> (f64, Vec<Option<f64>>) {
        let mut hits = vec![0usize; self.n_classes];
        let mut totals = vec![0usize; self.n_classes];
        for i in 0..set.len() {
            let y = set.y[i];
            if y < self.n_classes {
                totals[y] += 1;
                hits[y] += usize::from(self.predict(set.row(i)) == y);
            }
        }
        let n: usize = totals.iter().sum();
        let acc = if n == 0 {
            0.0
        } else {
            hits.iter().sum::<usize>() as f64 / n as f64
        };
        let per = hits
            .iter()
            .zip(&totals)
            .map(|(&h, &t)| (t > 0).then(|| h as f64 / t as f64))
            .collect();
        (acc, per)
    }
}

/// Fits a probe on `train` and scores it on `test`.
pub fn train_linear_probe(
    train: &LabeledSet,
    test: &LabeledSet,
    n_classes: usize,
    cfg: &ProbeConfig,
    seed: u64,
    checkpoint_id: &str,
) -> Result<ProbeResult> {
    if test.is_empty() {
        return Err(Error::DegenerateSplit("empty test set".into()));
    }
    let probe = LinearProbe::fit(train, n_classes, cfg, seed)?;
    let (accuracy, per_class_accuracy) = probe.evaluate(test);
    Ok(ProbeResult {
        accuracy,
        per_class_accuracy,
        train_size: train.len(),
        test_size: test.len(),
        checkpoint_id: checkpoint_id.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn one_hot_set(n: usize, c: usize, seed: u64) -> LabeledSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = LabeledSet::new(c);
        for _ in 0..n {
            let y = rng.gen_range(0..c);
            let mut row = vec![0.0; c];
            row[y] = 1.0;
            s.push(&row, y);
        }
        s
    }

    #[test]
    fn separable_case() {
        let cfg = ProbeConfig {
            epochs: 20,
            ..ProbeConfig::default()
        };
        let r = train_linear_probe(&one_hot_set(400, 5, 1), &one_hot_set(100, 5, 2), 5, &cfg, 0, "x")
            .unwrap();
        assert!(r.accuracy >= 0.99);
        assert_eq!((r.train_size, r.test_size), (400, 100));
    }

    #[test]
    fn constant_labels_are_degenerate() {
        let mut s = LabeledSet::new(2);
        for i in 0..10 {
            s.push(&[i as f64, 1.0], 0);
        }
        assert!(matches!(
            train_linear_probe(&s, &s, 3, &ProbeConfig::default(), 0, "x"),
            Err(Error::DegenerateSplit(_))
        ));
    }

    #[test]
    fn random_features_score_near_chance() {
        let c = 4;
        let mut accs = Vec::new();
        for seed in 0..3 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut make = |n: usize| {
                let mut s = LabeledSet::new(16);
                for _ in 0..n {
                    let row: Vec<f64> = (0..16).map(|_| rng.gen::<f64>()).collect();
                    s.push(&row, rng.gen_range(0..c));
                }
                s
            };
            let (train, test) = (make(2000), make(2000));
            let cfg = ProbeConfig {
                epochs: 10,
                ..ProbeConfig::default()
            };
            accs.push(train_linear_probe(&train, &test, c, &cfg, seed, "x").unwrap().accuracy);
        }
        for a in accs {
            assert!((a - 0.25).abs() < 0.05, "{a}");
        }
    }

    #[test]
    fn deterministic_under_seed() {
        let train = one_hot_set(200, 3, 4);
        let cfg = ProbeConfig {
            epochs: 5,
            ..ProbeConfig::default()
        };
        let a = LinearProbe::fit(&train, 3, &cfg, 9).unwrap();
        let b = LinearProbe::fit(&train, 3, &cfg, 9).unwrap();
        assert_eq!(a, b);
    }
}
