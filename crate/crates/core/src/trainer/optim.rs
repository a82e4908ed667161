use crate::autodiff::Array;
use crate::encoder::ParamSet;
use crate::error::{Error, Result};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Adam moments and update count.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Array>,
    pub v: Vec<Array>,
    pub t: u64,
}

impl AdamState {
    pub fn new(params: &ParamSet) -> Self {
        let zeros = || params.values().iter().map(|p| Array::zeros(p.shape())).collect();
        Self {
            m: zeros(),
            v: zeros(),
            t: 0,
        }
    }

    /// Bias-corrected Adam update of every parameter in place.
    pub fn update(&mut self, params: &mut ParamSet, grads: &[Array], lr: f64) -> Result<()> {
        if grads.len() != params.len() || self.m.len() != params.len() {
            return Err(Error::shape(
                "adam",
                format!("{} grads for {} params", grads.len(), params.len()),
            ));
        }
        self.t += 1;
        let c1 = 1.0 - BETA1.powi(self.t as i32);
        let c2 = 1.0 - BETA2.powi(self.t as i32);
        for (((id, g), m), v) in params.ids().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            let p = params.get_mut(id);
            if p.shape() != g.shape() {
                return Err(Error::shape("adam", format!("{:?} vs {:?}", p.shape(), g.shape())));
            }
            for (((w, &g), m), v) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *m = BETA1 * *m + (1.0 - BETA1) * g;
                *v = BETA2 * *v + (1.0 - BETA2) * g * g;
                *w -= lr * (*m / c1) / ((*v / c2).sqrt() + ADAM_EPS);
            }
        }
        Ok(())
    }
}

/// Global L2 norm of all gradients.
pub fn global_norm(grads: &[Array]) -> f64 {
    grads.iter().map(Array::squared_norm).sum::<f64>().sqrt()
}

/// Rescales `grads` so their global norm is at most `max_norm`; returns
/// the norm before clipping.
pub fn clip_global_norm(grads: &mut [Array], max_norm: f64) -> f64 {
    let norm = global_norm(grads);
    if norm > max_norm {
        let s = max_norm / norm;
        for g in grads.iter_mut() {
            g.data_mut().iter_mut().for_each(|x| *x *= s);
        }
    }
    norm
}
