//! Reverse-mode differentiation over dense `f64` arrays.
//!
//! A [`Tape`] records every operation as it is evaluated. Calling
//! [`Tape::backward`] on a scalar node sweeps the tape in reverse and
//! returns [`Gradients`] for every node that depends on a
//! [`Tape::leaf`]. Inputs created with [`Tape::constant`] are never
//! differentiated, which keeps targets and masks cheap.
//!
//! Every op checks its output for NaN/inf and fails with
//! [`Error::NumericFailure`](crate::Error::NumericFailure) naming the op and
//! node id.

mod array;
mod gradcheck;
mod kernels;
mod suite;
mod tape;

pub use array::Array;
pub use gradcheck::{finite_diff_check, relative_error, GradCheckOptions, GradCheckReport};
pub use suite::primitive_gradchecks;
pub use tape::{Gradients, Tape, Var};

use rand::Rng;
use rand_distr::StandardNormal;

/// Standard-normal array scaled by `std`.
pub fn randn(rng: &mut impl Rng, shape: &[usize], std: f64) -> Array {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| rng.sample::<f64, _>(StandardNormal) * std)
        .collect();
    Array::new(shape.to_vec(), data).expect("shape product matches")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn every_primitive_matches_finite_differences() {
        let results = primitive_gradchecks(0).unwrap();
        assert!(results.len() >= 30);
        for (name, report) in results {
            assert!(report.checked > 0, "{name}");
            assert!(report.max_rel_error < 1e-6, "{name}: {report:?}");
        }
    }

    #[test]
    fn softmax_of_zeros_is_uniform() {
        let mut t = Tape::new();
        let x = t.constant(Array::zeros(&[3]));
        let s = t.softmax(x, 0).unwrap();
        for v in t.value(s).data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn layer_norm_of_constant_is_zero() {
        let mut t = Tape::new();
        let x = t.constant(Array::full(&[1, 8], 4.2));
        let y = t.layer_norm(x, 1, 1e-5).unwrap();
        assert!(t.value(y).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn stem_conv_frame_count() {
        let mut t = Tape::new();
        let x = t.constant(Array::zeros(&[1, 32000, 1]));
        let w = t.leaf(Array::zeros(&[320, 1, 2]));
        let y = t.conv1d(x, w, None, 160, 80).unwrap();
        assert_eq!(t.shape(y), &[1, 200, 2]);
    }

    #[test]
    fn backward_of_quadratic_is_twice_w() {
        let w = Array::from_vec(vec![1.0, -2.0, 0.5]);
        let mut t = Tape::new();
        let v = t.leaf(w.clone());
        let sq = t.mul(v, v).unwrap();
        let root = t.sum(sq).unwrap();
        let g = t.backward(root).unwrap();
        assert_eq!(g.get(v).unwrap().data(), &[2.0, -4.0, 1.0]);
    }

    #[test]
    fn constant_root_gives_zero_grads() {
        let mut t = Tape::new();
        let w = t.leaf(Array::from_vec(vec![1.0, 2.0]));
        let c = t.constant(Array::scalar(3.0));
        let root = t.scale(c, 2.0).unwrap();
        let g = t.backward(root).unwrap();
        assert_eq!(g.get(w).unwrap().data(), &[0.0, 0.0]);
    }

    #[test]
    fn non_scalar_root_is_rejected() {
        let mut t = Tape::new();
        let w = t.leaf(Array::from_vec(vec![1.0, 2.0]));
        assert!(matches!(t.backward(w), Err(Error::NonScalarRoot(_))));
    }

    #[test]
    fn shape_errors_name_the_op() {
        let mut t = Tape::new();
        let a = t.leaf(Array::zeros(&[2, 3]));
        let b = t.leaf(Array::zeros(&[4, 2]));
        match t.matmul(a, b) {
            Err(Error::ShapeMismatch { op, detail }) => {
                assert_eq!(op, "matmul");
                assert!(detail.contains("[2, 3]"));
            }
            other => panic!("{other:?}"),
        }
        assert!(matches!(t.add(a, b), Err(Error::ShapeMismatch { op: "add", .. })));
    }

    #[test]
    fn nan_is_a_numeric_failure() {
        let mut t = Tape::new();
        let x = t.leaf(Array::from_vec(vec![-1.0]));
        match t.log(x) {
            Err(Error::NumericFailure { op, node }) => {
                assert_eq!(op, "log");
                assert_eq!(node, 1);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn backward_is_linear() {
        let mut r = rng(8);
        let w0 = randn(&mut r, &[4, 3], 1.0);
        let grad_of = |which: u8| {
            let mut t = Tape::new();
            let w = t.leaf(w0.clone());
            let f = {
                let e = t.exp(w).unwrap();
                t.sum(e).unwrap()
            };
            let g = {
                let s = t.softmax(w, 1).unwrap();
                let sq = t.mul(s, w).unwrap();
                t.sum(sq).unwrap()
            };
            let root = match which {
                0 => f,
                1 => g,
                _ => {
                    let a = t.scale(f, 1.5).unwrap();
                    let b = t.scale(g, -0.75).unwrap();
                    t.add(a, b).unwrap()
                }
            };
            t.backward(root).unwrap().get(w).unwrap().clone()
        };
        let (gf, gg, gc) = (grad_of(0), grad_of(1), grad_of(2));
        for i in 0..gc.len() {
            let want = 1.5 * gf.data()[i] - 0.75 * gg.data()[i];
            assert!((gc.data()[i] - want).abs() < 1e-10);
        }
    }

    #[test]
    fn determinism() {
        let run = || {
            let mut r = rng(9);
            let mut t = Tape::new();
            let a = t.leaf(randn(&mut r, &[3, 4], 1.0));
            let b = t.leaf(randn(&mut r, &[4, 2], 1.0));
            let y = t.matmul(a, b).unwrap();
            let y = t.gelu(y).unwrap();
            let root = t.sum(y).unwrap();
            let g = t.backward(root).unwrap();
            (
                t.item(root).to_bits(),
                g.get(a).unwrap().clone(),
                g.get(b).unwrap().clone(),
            )
        };
        assert_eq!(run(), run());
    }
}
