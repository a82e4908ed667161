use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{finite_diff_check, randn, Array, GradCheckOptions, GradCheckReport, Tape, Var};
use crate::error::Result;

/// Reduces an arbitrary output to a scalar with fixed random weights so
/// every output element contributes a distinct gradient.
fn project(t: &mut Tape, y: Var, seed: u64) -> Result<Var> {
    let w = randn(&mut ChaCha8Rng::seed_from_u64(seed), t.shape(y), 1.0);
    let w = t.constant(w);
    let p = t.mul(y, w)?;
    t.sum(p)
}

type Case = (&'static str, Vec<Array>, Box<dyn Fn(&mut Tape, &[Var]) -> Result<Var>>);

fn cases(seed: u64) -> Vec<Case> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let a = randn(&mut r, &[2, 3, 4], 1.0);
    let b = randn(&mut r, &[4], 1.0);
    let c = randn(&mut r, &[3, 1], 1.0);
    let w = randn(&mut r, &[4, 5], 1.0);
    let bw = randn(&mut r, &[2, 4, 5], 1.0);
    let seq = randn(&mut r, &[2, 11, 3], 1.0);
    let kern = randn(&mut r, &[4, 3, 2], 1.0);
    let bias = randn(&mut r, &[2], 1.0);
    let frames = randn(&mut r, &[2, 6, 4], 1.0);
    let y = randn(&mut r, &[2, 2, 4], 1.0);
    let m = randn(&mut r, &[5, 3], 1.0);
    // keep away from the relu/abs/clamp kinks so every coordinate is smooth
    let x = randn(&mut r, &[3, 4], 1.0).map(|v| if v.abs() < 0.05 { 0.3 } else { v });
    let pos = x.map(|v| v.abs() + 0.2);
    let away = x.map(|v| if (v.abs() - 0.5).abs() < 0.05 { 0.2 } else { v });
    let n3 = randn(&mut r, &[3, 4, 5], 1.0);

    let mut out: Vec<Case> = vec![
        ("add", vec![a.clone(), b.clone()], Box::new(|t, p| t.add(p[0], p[1]))),
        ("sub", vec![a.clone(), c.clone()], Box::new(|t, p| t.sub(p[0], p[1]))),
        ("mul", vec![a.clone(), b.clone()], Box::new(|t, p| t.mul(p[0], p[1]))),
        ("mul_broadcast_left", vec![c.clone(), a.clone()], Box::new(|t, p| t.mul(p[0], p[1]))),
        ("div", vec![a.clone(), b.map(|v| v.abs() + 0.5)], Box::new(|t, p| t.div(p[0], p[1]))),
        ("div_broadcast_left", vec![c, a.map(|v| v.abs() + 0.5)], Box::new(|t, p| t.div(p[0], p[1]))),
        ("matmul_shared", vec![a.clone(), w], Box::new(|t, p| t.matmul(p[0], p[1]))),
        ("matmul_batched", vec![a.clone(), bw], Box::new(|t, p| t.matmul(p[0], p[1]))),
        ("conv1d", vec![seq.clone(), kern, bias], Box::new(|t, p| t.conv1d(p[0], p[1], Some(p[2]), 2, 1))),
        ("unfold", vec![seq], Box::new(|t, p| t.unfold(p[0], 5, 3, 2))),
        ("overlap_add", vec![frames], Box::new(|t, p| t.overlap_add(p[0], 2, 1))),
        ("permute", vec![a.clone()], Box::new(|t, p| t.permute(p[0], &[2, 0, 1]))),
        ("transpose", vec![a.clone()], Box::new(|t, p| t.transpose(p[0]))),
        ("reshape", vec![a.clone()], Box::new(|t, p| t.reshape(p[0], &[6, 4]))),
        ("concat", vec![a.clone(), y], Box::new(|t, p| t.concat(&[p[0], p[1]], 1))),
        ("slice", vec![a.clone()], Box::new(|t, p| t.slice(p[0], 2, 1, 3))),
        ("gather_rows", vec![m], Box::new(|t, p| t.gather_rows(p[0], &[4, 0, 4, 2]))),
        ("sum", vec![a.clone()], Box::new(|t, p| t.sum(p[0]))),
        ("mean", vec![a.clone()], Box::new(|t, p| t.mean(p[0]))),
        ("relu", vec![x.clone()], Box::new(|t, p| t.relu(p[0]))),
        ("gelu", vec![x.clone()], Box::new(|t, p| t.gelu(p[0]))),
        ("abs", vec![x.clone()], Box::new(|t, p| t.abs(p[0]))),
        ("exp", vec![x.clone()], Box::new(|t, p| t.exp(p[0]))),
        ("log", vec![pos.clone()], Box::new(|t, p| t.log(p[0]))),
        ("powf", vec![pos], Box::new(|t, p| t.powf(p[0], -0.5))),
        ("scale", vec![x.clone()], Box::new(|t, p| t.scale(p[0], -2.5))),
        ("add_scalar", vec![x], Box::new(|t, p| t.add_scalar(p[0], 3.0))),
        ("clamp", vec![away], Box::new(|t, p| t.clamp(p[0], -0.5, 0.5))),
    ];
    const AXIS_NAMES: [[&str; 3]; 5] = [
        ["sum_axis0", "sum_axis1", "sum_axis2"],
        ["mean_axis0", "mean_axis1", "mean_axis2"],
        ["softmax0", "softmax1", "softmax2"],
        ["log_softmax0", "log_softmax1", "log_softmax2"],
        ["layer_norm0", "layer_norm1", "layer_norm2"],
    ];
    for axis in 0..3 {
        out.push((AXIS_NAMES[0][axis], vec![a.clone()], Box::new(move |t, p| t.sum_axis(p[0], axis))));
        out.push((AXIS_NAMES[1][axis], vec![a.clone()], Box::new(move |t, p| t.mean_axis(p[0], axis))));
        out.push((AXIS_NAMES[2][axis], vec![n3.clone()], Box::new(move |t, p| t.softmax(p[0], axis))));
        out.push((AXIS_NAMES[3][axis], vec![n3.clone()], Box::new(move |t, p| t.log_softmax(p[0], axis))));
        out.push((
            AXIS_NAMES[4][axis],
            vec![n3.clone()],
            Box::new(move |t, p| t.layer_norm(p[0], axis, 1e-5)),
        ));
    }
    out
}

/// Central-difference check of every differentiable primitive on small
/// random inputs, one report per primitive (and axis where relevant).
pub fn primitive_gradchecks(seed: u64) -> Result<Vec<(&'static str, GradCheckReport)>> {
    cases(seed)
        .into_iter()
        .map(|(name, params, f)| {
            let report = finite_diff_check(
                |t, p| {
                    let y = f(t, p)?;
                    project(t, y, 99)
                },
                &params,
                GradCheckOptions {
                    eps: 1e-6,
                    ..Default::default()
                },
            )?;
            Ok((name, report))
        })
        .collect()
}
