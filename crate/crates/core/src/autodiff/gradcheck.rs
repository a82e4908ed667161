//! Central finite-difference verification of tape gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Array, Tape, Var};
use crate::error::{Error, Result};

/// Which coordinates to perturb.
#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    pub eps: f64,
    /// Check at most this many coordinates per parameter (all when `None`).
    pub max_coords_per_param: Option<usize>,
    pub seed: u64,
    /// One-sided slopes differing by more than this (relative to the
    /// central slope, floored at 1) mark a kink; the coordinate is skipped.
    pub kink_tolerance: f64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            eps: 1e-5,
            max_coords_per_param: None,
            seed: 0,
            kink_tolerance: 1e-2,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// `(param index, flat offset)` of the worst coordinate.
    pub worst: Option<(usize, usize)>,
    pub checked: usize,
    pub skipped_nonfinite: usize,
    pub skipped_nonsmooth: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.checked > 0 && self.max_rel_error < tol
    }
}

/// `|a - b| / max(|a|, |b|, 1e-8)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

fn evaluate<F>(f: &F, params: &[Array]) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.leaf(p.clone())).collect();
    let root = f(&mut tape, &vars)?;
    Ok(tape.item(root))
}

/// Compares reverse-mode gradients of `f` at `params` with central
/// differences `(f(θ+εe) − f(θ−εe)) / 2ε`.
///
/// Coordinates where a perturbed evaluation fails or is non-finite are
/// skipped and counted, as are coordinates sitting on a kink (one-sided
/// slopes disagree).
pub fn finite_diff_check<F>(
    f: F,
    params: &[Array],
    opts: GradCheckOptions,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    if opts.eps <= 0.0 {
        return Err(Error::InvalidArgument("eps must be positive".into()));
    }
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.leaf(p.clone())).collect();
    let root = f(&mut tape, &vars)?;
    let f0 = tape.item(root);
    let grads = tape.backward(root)?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut report = GradCheckReport::default();
    let mut work: Vec<Array> = params.to_vec();
    for (pi, param) in params.iter().enumerate() {
        let zeros = Array::zeros(param.shape());
        let analytic = grads.get(vars[pi]).unwrap_or(&zeros);
        let coords: Vec<usize> = match opts.max_coords_per_param {
            Some(m) if m < param.len() => sample(&mut rng, param.len(), m).into_vec(),
            _ => (0..param.len()).collect(),
        };
        for c in coords {
            let orig = param.data()[c];
            work[pi].data_mut()[c] = orig + opts.eps;
            let plus = evaluate(&f, &work);
            work[pi].data_mut()[c] = orig - opts.eps;
            let minus = evaluate(&f, &work);
            work[pi].data_mut()[c] = orig;
            let (plus, minus) = match (plus, minus) {
                (Ok(p), Ok(m)) if p.is_finite() && m.is_finite() => (p, m),
                _ => {
                    report.skipped_nonfinite += 1;
                    continue;
                }
            };
            let central = (plus - minus) / (2.0 * opts.eps);
            let forward = (plus - f0) / opts.eps;
            let backward = (f0 - minus) / opts.eps;
            if (forward - backward).abs() > opts.kink_tolerance * central.abs().max(1.0) {
                report.skipped_nonsmooth += 1;
                continue;
            }
            let err = relative_error(analytic.data()[c], central);
            report.checked += 1;
            if report.worst.is_none() || err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = Some((pi, c));
            }
        }
    }
    Ok(report)
}
