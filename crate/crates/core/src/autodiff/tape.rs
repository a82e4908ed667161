use super::array::{axis_split, Array};
use super::kernels::{
    broadcast_shape, broadcast_strides, gemm, inverse_permutation, permute, walk_broadcast,
};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    MatMul(Var, Var),
    Unfold {
        x: Var,
        kernel: usize,
        stride: usize,
        pad: usize,
    },
    OverlapAdd {
        x: Var,
        stride: usize,
        pad: usize,
    },
    Permute(Var, Vec<usize>),
    Reshape(Var),
    SumAxis(Var, usize),
    SumAll(Var),
    Relu(Var),
    Gelu(Var),
    Abs(Var),
    Softmax(Var, usize),
    LogSoftmax(Var, usize),
    LayerNorm {
        x: Var,
        axis: usize,
        rstd: Vec<f64>,
    },
    Log(Var),
    Exp(Var),
    Scale(Var, f64),
    AddScalar(Var),
    Powf(Var, f64),
    Clamp(Var, f64, f64),
    Concat(Vec<Var>, usize),
    Slice {
        x: Var,
        axis: usize,
        start: usize,
    },
    GatherRows(Var, Vec<usize>),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Div(..) => "div",
            Op::MatMul(..) => "matmul",
            Op::Unfold { .. } => "unfold",
            Op::OverlapAdd { .. } => "overlap_add",
            Op::Permute(..) => "permute",
            Op::Reshape(..) => "reshape",
            Op::SumAxis(..) => "sum_axis",
            Op::SumAll(..) => "sum",
            Op::Relu(..) => "relu",
            Op::Gelu(..) => "gelu",
            Op::Abs(..) => "abs",
            Op::Softmax(..) => "softmax",
            Op::LogSoftmax(..) => "log_softmax",
            Op::LayerNorm { .. } => "layer_norm",
            Op::Log(..) => "log",
            Op::Exp(..) => "exp",
            Op::Scale(..) => "scale",
            Op::AddScalar(..) => "add_scalar",
            Op::Powf(..) => "powf",
            Op::Clamp(..) => "clamp",
            Op::Concat(..) => "concat",
            Op::Slice { .. } => "slice",
            Op::GatherRows(..) => "gather_rows",
        }
    }
}

#[derive(Debug)]
struct Node {
    value: Array,
    op: Op,
    needs_grad: bool,
}

/// Records array operations for reverse-mode differentiation.
///
/// Nodes are appended in evaluation order, so the tape itself is a
/// topological order of the graph and the backward pass is a single
/// reverse sweep.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of a scalar root with respect to every trainable leaf.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Array>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Array> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Array> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044715;

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

fn check_axis(op: &'static str, shape: &[usize], axis: usize) -> Result<()> {
    if axis >= shape.len() {
        return Err(Error::shape(op, format!("axis {axis} out of range for {shape:?}")));
    }
    Ok(())
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Differentiable input.
    pub fn leaf(&mut self, value: Array) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// Input excluded from differentiation.
    pub fn constant(&mut self, value: Array) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Array {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn item(&self, v: Var) -> f64 {
        self.nodes[v.0].value.item()
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    fn push(&mut self, value: Array, op: Op, parents: &[Var]) -> Result<Var> {
        let id = self.nodes.len();
        if !value.is_finite() {
            return Err(Error::NumericFailure {
                op: op.name(),
                node: id,
            });
        }
        let needs_grad = self.needs(parents);
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Ok(Var(id))
    }

    // ---- elementwise binary ops with broadcasting ----

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Array> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let out_shape = broadcast_shape(sa, sb)
            .ok_or_else(|| Error::shape(name, format!("{sa:?} vs {sb:?}")))?;
        let (va, vb) = (self.value(a).data(), self.value(b).data());
        let n: usize = out_shape.iter().product();
        let mut out = vec![0.0; n];
        if sa == sb {
            for ((o, x), y) in out.iter_mut().zip(va).zip(vb) {
                *o = f(*x, *y);
            }
        } else {
            let stra = broadcast_strides(sa, &out_shape);
            let strb = broadcast_strides(sb, &out_shape);
            walk_broadcast(&out_shape, &stra, &strb, |o, i, j| out[o] = f(va[i], vb[j]));
        }
        Array::new(out_shape, out)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.binary("add", a, b, |x, y| x + y)?;
        self.push(v, Op::Add(a, b), &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.binary("sub", a, b, |x, y| x - y)?;
        self.push(v, Op::Sub(a, b), &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.binary("mul", a, b, |x, y| x * y)?;
        self.push(v, Op::Mul(a, b), &[a, b])
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.binary("div", a, b, |x, y| x / y)?;
        self.push(v, Op::Div(a, b), &[a, b])
    }

    // ---- linear algebra ----

    /// `[..., m, k] × [k, n]` (shared right operand) or batched
    /// `[..., m, k] × [..., k, n]` with identical leading dimensions.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let err = || Error::shape("matmul", format!("{sa:?} × {sb:?}"));
        if sa.len() < 2 || sb.len() < 2 {
            return Err(err());
        }
        let (m, k) = (sa[sa.len() - 2], sa[sa.len() - 1]);
        let (k2, n) = (sb[sb.len() - 2], sb[sb.len() - 1]);
        if k != k2 {
            return Err(err());
        }
        let mut out_shape = sa[..sa.len() - 2].to_vec();
        out_shape.extend([m, n]);
        let batch: usize = sa[..sa.len() - 2].iter().product();
        let mut out = vec![0.0; batch * m * n];
        let (va, vb) = (self.value(a).data(), self.value(b).data());
        if sb.len() == 2 {
            gemm(batch * m, k, n, va, false, vb, false, &mut out, false);
        } else {
            if sb[..sb.len() - 2] != sa[..sa.len() - 2] {
                return Err(err());
            }
            for i in 0..batch {
                gemm(
                    m,
                    k,
                    n,
                    &va[i * m * k..],
                    false,
                    &vb[i * k * n..],
                    false,
                    &mut out[i * m * n..],
                    false,
                );
            }
        }
        let v = Array::new(out_shape, out)?;
        self.push(v, Op::MatMul(a, b), &[a, b])
    }

    /// Sliding windows over axis 1 of `[B, L, C]`: output
    /// `[B, L_out, kernel*C]` with element `k*C + c` of window `t` equal to
    /// `x[b, t*stride + k - pad, c]` (zero outside the signal).
    pub fn unfold(&mut self, x: Var, kernel: usize, stride: usize, pad: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.len() != 3 || kernel == 0 || stride == 0 || shape[1] + 2 * pad < kernel {
            return Err(Error::shape(
                "unfold",
                format!("{shape:?} kernel {kernel} stride {stride} pad {pad}"),
            ));
        }
        let (b, l, c) = (shape[0], shape[1], shape[2]);
        let l_out = (l + 2 * pad - kernel) / stride + 1;
        let row = kernel * c;
        let xs = self.value(x).data();
        let mut out = vec![0.0; b * l_out * row];
        for bi in 0..b {
            for t in 0..l_out {
                let dst = &mut out[(bi * l_out + t) * row..(bi * l_out + t + 1) * row];
                // contiguous run of valid input positions
                let first = (t * stride) as isize - pad as isize;
                let lo = (-first).max(0) as usize;
                let hi = ((l as isize - first).max(0) as usize).min(kernel);
                if lo < hi {
                    let src_start = (bi * l) as isize + first + lo as isize;
                    let src = &xs[src_start as usize * c..(src_start as usize + hi - lo) * c];
                    dst[lo * c..hi * c].copy_from_slice(src);
                }
            }
        }
        let v = Array::new(vec![b, l_out, row], out)?;
        self.push(
            v,
            Op::Unfold {
                x,
                kernel,
                stride,
                pad,
            },
            &[x],
        )
    }

    /// Adjoint of a single-channel [`unfold`](Self::unfold): `[B, L_in, K]`
    /// windows are summed into `[B, (L_in-1)*stride - 2*pad + K]`.
    pub fn overlap_add(&mut self, x: Var, stride: usize, pad: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.len() != 3 || stride == 0 || (shape[1] - 1) * stride + shape[2] < 2 * pad {
            return Err(Error::shape(
                "overlap_add",
                format!("{shape:?} stride {stride} pad {pad}"),
            ));
        }
        let (b, l_in, k) = (shape[0], shape[1], shape[2]);
        let l_out = (l_in - 1) * stride + k - 2 * pad;
        let xs = self.value(x).data();
        let mut out = vec![0.0; b * l_out];
        for bi in 0..b {
            for t in 0..l_in {
                let src = &xs[(bi * l_in + t) * k..(bi * l_in + t + 1) * k];
                for (j, v) in src.iter().enumerate() {
                    let s = (t * stride + j) as isize - pad as isize;
                    if s >= 0 && (s as usize) < l_out {
                        out[bi * l_out + s as usize] += v;
                    }
                }
            }
        }
        let v = Array::new(vec![b, l_out], out)?;
        self.push(v, Op::OverlapAdd { x, stride, pad }, &[x])
    }

    /// 1-D convolution over `[B, L, C_in]` with weight `[K, C_in, C_out]`
    /// and optional bias `[C_out]`; symmetric zero padding of `pad` samples.
    pub fn conv1d(
        &mut self,
        x: Var,
        weight: Var,
        bias: Option<Var>,
        stride: usize,
        pad: usize,
    ) -> Result<Var> {
        let ws = self.shape(weight).to_vec();
        let xs = self.shape(x).to_vec();
        if ws.len() != 3 || xs.len() != 3 || xs[2] != ws[1] {
            return Err(Error::shape("conv1d", format!("input {xs:?} weight {ws:?}")));
        }
        let cols = self.unfold(x, ws[0], stride, pad)?;
        let w2 = self.reshape(weight, &[ws[0] * ws[1], ws[2]])?;
        let y = self.matmul(cols, w2)?;
        match bias {
            Some(b) => self.add(y, b),
            None => Ok(y),
        }
    }

    pub fn permute(&mut self, x: Var, axes: &[usize]) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let mut seen = vec![false; shape.len()];
        if axes.len() != shape.len()
            || axes
                .iter()
                .any(|&a| a >= shape.len() || std::mem::replace(&mut seen[a], true))
        {
            return Err(Error::shape("permute", format!("{shape:?} by {axes:?}")));
        }
        let (data, out_shape) = permute(self.value(x).data(), &shape, axes);
        let v = Array::new(out_shape, data)?;
        self.push(v, Op::Permute(x, axes.to_vec()), &[x])
    }

    /// Swaps the last two axes.
    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let r = self.shape(x).len();
        if r < 2 {
            return Err(Error::shape("transpose", format!("{:?}", self.shape(x))));
        }
        let mut axes: Vec<usize> = (0..r).collect();
        axes.swap(r - 2, r - 1);
        self.permute(x, &axes)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let v = self.value(x).clone().reshaped(shape)?;
        self.push(v, Op::Reshape(x), &[x])
    }

    // ---- reductions ----

    pub fn sum_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        check_axis("sum_axis", &shape, axis)?;
        let (outer, n, inner) = axis_split(&shape, axis);
        let xs = self.value(x).data();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for i in 0..n {
                let src = &xs[(o * n + i) * inner..(o * n + i + 1) * inner];
                for (d, s) in out[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                    *d += s;
                }
            }
        }
        let mut out_shape = shape;
        out_shape.remove(axis);
        let v = Array::new(out_shape, out)?;
        self.push(v, Op::SumAxis(x, axis), &[x])
    }

    pub fn mean_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        check_axis("mean_axis", self.shape(x), axis)?;
        let n = self.shape(x)[axis];
        let s = self.sum_axis(x, axis)?;
        self.scale(s, 1.0 / n as f64)
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let v = Array::scalar(self.value(x).sum());
        self.push(v, Op::SumAll(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let n = self.value(x).len();
        if n == 0 {
            return Err(Error::shape("mean", "empty input"));
        }
        let s = self.sum(x)?;
        self.scale(s, 1.0 / n as f64)
    }

    // ---- unary ----

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x).map(|t| t.max(0.0));
        self.push(v, Op::Relu(x), &[x])
    }

    /// Tanh approximation of GELU.
    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x).map(gelu);
        self.push(v, Op::Gelu(x), &[x])
    }

    pub fn abs(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x).map(f64::abs);
        self.push(v, Op::Abs(x), &[x])
    }

    pub fn log(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x).map(f64::ln);
        self.push(v, Op::Log(x), &[x])
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x).map(f64::exp);
        self.push(v, Op::Exp(x), &[x])
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        let v = self.value(x).map(|t| t * c);
        self.push(v, Op::Scale(x, c), &[x])
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Result<Var> {
        let v = self.value(x).map(|t| t + c);
        self.push(v, Op::AddScalar(x), &[x])
    }

    pub fn powf(&mut self, x: Var, p: f64) -> Result<Var> {
        let v = self.value(x).map(|t| t.powf(p));
        self.push(v, Op::Powf(x, p), &[x])
    }

    /// Clamps to `[lo, hi]`; the gradient is zero where the clamp is active.
    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Result<Var> {
        let v = self.value(x).map(|t| t.clamp(lo, hi));
        self.push(v, Op::Clamp(x, lo, hi), &[x])
    }

    // ---- normalisation ----

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        check_axis("softmax", &shape, axis)?;
        let data = softmax_along(self.value(x).data(), &shape, axis, false);
        let v = Array::new(shape, data)?;
        self.push(v, Op::Softmax(x, axis), &[x])
    }

    /// `x - logsumexp(x)` along `axis`, with max subtraction.
    pub fn log_softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        check_axis("log_softmax", &shape, axis)?;
        let data = softmax_along(self.value(x).data(), &shape, axis, true);
        let v = Array::new(shape, data)?;
        self.push(v, Op::LogSoftmax(x, axis), &[x])
    }

    /// `(x - mean) / sqrt(var + eps)` along `axis`, no affine transform.
    pub fn layer_norm(&mut self, x: Var, axis: usize, eps: f64) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        check_axis("layer_norm", &shape, axis)?;
        let (outer, n, inner) = axis_split(&shape, axis);
        let xs = self.value(x).data();
        let mut out = vec![0.0; xs.len()];
        let mut rstd = vec![0.0; outer * inner];
        for o in 0..outer {
            for i in 0..inner {
                let at = |j: usize| (o * n + j) * inner + i;
                let mean = (0..n).map(|j| xs[at(j)]).sum::<f64>() / n as f64;
                let var = (0..n).map(|j| (xs[at(j)] - mean).powi(2)).sum::<f64>() / n as f64;
                let r = 1.0 / (var + eps).sqrt();
                rstd[o * inner + i] = r;
                for j in 0..n {
                    out[at(j)] = (xs[at(j)] - mean) * r;
                }
            }
        }
        let v = Array::new(shape, out)?;
        self.push(v, Op::LayerNorm { x, axis, rstd }, &[x])
    }

    // ---- structural ----

    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        let first = xs
            .first()
            .ok_or_else(|| Error::shape("concat", "no inputs"))?;
        let base = self.shape(*first).to_vec();
        check_axis("concat", &base, axis)?;
        let mut total = 0;
        for &v in xs {
            let s = self.shape(v);
            let compatible = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(d, (a, b))| d == axis || a == b);
            if !compatible {
                return Err(Error::shape("concat", format!("{base:?} vs {s:?}")));
            }
            total += s[axis];
        }
        let (outer, _, inner) = axis_split(&base, axis);
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &v in xs {
                let n = self.shape(v)[axis];
                out.extend_from_slice(&self.value(v).data()[o * n * inner..(o + 1) * n * inner]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let v = Array::new(shape, out)?;
        self.push(v, Op::Concat(xs.to_vec(), axis), xs)
    }

    /// Elements `[start, end)` along `axis`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, end: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        check_axis("slice", &shape, axis)?;
        if start > end || end > shape[axis] {
            return Err(Error::shape(
                "slice",
                format!("[{start}, {end}) on axis {axis} of {shape:?}"),
            ));
        }
        let (outer, n, inner) = axis_split(&shape, axis);
        let xs = self.value(x).data();
        let mut out = Vec::with_capacity(outer * (end - start) * inner);
        for o in 0..outer {
            out.extend_from_slice(&xs[(o * n + start) * inner..(o * n + end) * inner]);
        }
        let mut out_shape = shape;
        out_shape[axis] = end - start;
        let v = Array::new(out_shape, out)?;
        self.push(v, Op::Slice { x, axis, start }, &[x])
    }

    /// Rows of a `[N, D]` matrix selected by index: `[idx.len(), D]`.
    pub fn gather_rows(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.len() != 2 || idx.iter().any(|&i| i >= shape[0]) {
            return Err(Error::shape(
                "gather_rows",
                format!("{shape:?} with {} indices", idx.len()),
            ));
        }
        let d = shape[1];
        let xs = self.value(x).data();
        let mut out = Vec::with_capacity(idx.len() * d);
        for &i in idx {
            out.extend_from_slice(&xs[i * d..(i + 1) * d]);
        }
        let v = Array::new(vec![idx.len(), d], out)?;
        self.push(v, Op::GatherRows(x, idx.to_vec()), &[x])
    }

    // ---- backward ----

    /// Reverse sweep from a scalar `root`.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        let root_shape = self.shape(root);
        if self.value(root).len() != 1 {
            return Err(Error::NonScalarRoot(root_shape.to_vec()));
        }
        let mut grads: Vec<Option<Array>> = (0..=root.0).map(|_| None).collect();
        grads[root.0] = Some(Array::full(root_shape, 1.0));
        for id in (0..=root.0).rev() {
            let node = &self.nodes[id];
            if !node.needs_grad {
                grads[id] = None;
                continue;
            }
            let Some(g) = grads[id].take() else {
                continue;
            };
            self.backprop(node, &g, &mut grads)?;
            // only leaf gradients are returned; intermediates are freed
            if matches!(node.op, Op::Leaf) {
                grads[id] = Some(g);
            }
        }
        // leaves that never received a gradient still get zeros
        for (id, node) in self.nodes[..=root.0].iter().enumerate() {
            if node.needs_grad && matches!(node.op, Op::Leaf) && grads[id].is_none() {
                grads[id] = Some(Array::zeros(node.value.shape()));
            }
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Array>], v: Var, g: Array) {
        if !self.nodes[v.0].needs_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    /// Sums `g` (shaped like the broadcast output) back to `target`'s shape.
    fn unbroadcast(&self, g: &Array, target: Var, f: impl Fn(usize, usize) -> f64) -> Array {
        let ts = self.shape(target);
        let out_shape = g.shape();
        let mut out = vec![0.0; ts.iter().product()];
        let gd = g.data();
        if ts == out_shape {
            for (i, o) in out.iter_mut().enumerate() {
                *o = gd[i] * f(i, i);
            }
        } else {
            let st = broadcast_strides(ts, out_shape);
            let zero = vec![0; out_shape.len()];
            walk_broadcast(out_shape, &st, &zero, |o, t, _| out[t] += gd[o] * f(o, t));
        }
        Array::new(ts.to_vec(), out).expect("unbroadcast shape")
    }

    /// Per-element partner lookup for binary op gradients: returns a closure
    /// mapping an output offset to the partner operand's value.
    fn partner<'a>(&'a self, out_shape: &[usize], other: Var) -> impl Fn(usize) -> f64 + 'a {
        let os = self.shape(other);
        let data = self.value(other).data();
        if os == out_shape {
            PartnerIndex::Same(data).into_fn()
        } else {
            let strides = broadcast_strides(os, out_shape);
            PartnerIndex::Strided {
                data,
                strides,
                dims: out_shape.to_vec(),
            }
            .into_fn()
        }
    }

    fn backprop(&self, node: &Node, g: &Array, grads: &mut [Option<Array>]) -> Result<()> {
        let gd = g.data();
        let y = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                let ga = self.unbroadcast(g, *a, |_, _| 1.0);
                let gb = self.unbroadcast(g, *b, |_, _| 1.0);
                self.accumulate(grads, *a, ga);
                self.accumulate(grads, *b, gb);
            }
            Op::Sub(a, b) => {
                let ga = self.unbroadcast(g, *a, |_, _| 1.0);
                let gb = self.unbroadcast(g, *b, |_, _| -1.0);
                self.accumulate(grads, *a, ga);
                self.accumulate(grads, *b, gb);
            }
            Op::Mul(a, b) => {
                if self.nodes[a.0].needs_grad {
                    let pb = self.partner(g.shape(), *b);
                    let ga = self.unbroadcast(g, *a, |o, _| pb(o));
                    self.accumulate(grads, *a, ga);
                }
                if self.nodes[b.0].needs_grad {
                    let pa = self.partner(g.shape(), *a);
                    let gb = self.unbroadcast(g, *b, |o, _| pa(o));
                    self.accumulate(grads, *b, gb);
                }
            }
            Op::Div(a, b) => {
                let pb = self.partner(g.shape(), *b);
                if self.nodes[a.0].needs_grad {
                    let ga = self.unbroadcast(g, *a, |o, _| 1.0 / pb(o));
                    self.accumulate(grads, *a, ga);
                }
                if self.nodes[b.0].needs_grad {
                    let yd = y.data();
                    let gb = self.unbroadcast(g, *b, |o, _| -yd[o] / pb(o));
                    self.accumulate(grads, *b, gb);
                }
            }
            Op::MatMul(a, b) => self.matmul_backward(*a, *b, gd, grads),
            Op::Unfold {
                x,
                kernel,
                stride,
                pad,
            } => {
                let xs = self.shape(*x);
                let (b, l, c) = (xs[0], xs[1], xs[2]);
                let l_out = y.shape()[1];
                let row = kernel * c;
                let mut gx = vec![0.0; b * l * c];
                for bi in 0..b {
                    for t in 0..l_out {
                        let src = &gd[(bi * l_out + t) * row..(bi * l_out + t + 1) * row];
                        for k in 0..*kernel {
                            let s = (t * stride + k) as isize - *pad as isize;
                            if s < 0 || s as usize >= l {
                                continue;
                            }
                            let dst = (bi * l + s as usize) * c;
                            for ch in 0..c {
                                gx[dst + ch] += src[k * c + ch];
                            }
                        }
                    }
                }
                self.accumulate(grads, *x, Array::new(xs.to_vec(), gx)?);
            }
            Op::OverlapAdd { x, stride, pad } => {
                let xs = self.shape(*x);
                let (b, l_in, k) = (xs[0], xs[1], xs[2]);
                let l_out = y.shape()[1];
                let mut gx = vec![0.0; b * l_in * k];
                for bi in 0..b {
                    for t in 0..l_in {
                        for j in 0..k {
                            let s = (t * stride + j) as isize - *pad as isize;
                            if s >= 0 && (s as usize) < l_out {
                                gx[(bi * l_in + t) * k + j] = gd[bi * l_out + s as usize];
                            }
                        }
                    }
                }
                self.accumulate(grads, *x, Array::new(xs.to_vec(), gx)?);
            }
            Op::Permute(x, axes) => {
                let (data, shape) = permute(gd, g.shape(), &inverse_permutation(axes));
                self.accumulate(grads, *x, Array::new(shape, data)?);
            }
            Op::Reshape(x) => {
                let gx = g.clone().reshaped(self.shape(*x))?;
                self.accumulate(grads, *x, gx);
            }
            Op::SumAxis(x, axis) => {
                let xs = self.shape(*x);
                let (outer, n, inner) = axis_split(xs, *axis);
                let mut gx = vec![0.0; outer * n * inner];
                for o in 0..outer {
                    for i in 0..n {
                        gx[(o * n + i) * inner..(o * n + i + 1) * inner]
                            .copy_from_slice(&gd[o * inner..(o + 1) * inner]);
                    }
                }
                self.accumulate(grads, *x, Array::new(xs.to_vec(), gx)?);
            }
            Op::SumAll(x) => {
                let gx = Array::full(self.shape(*x), gd[0]);
                self.accumulate(grads, *x, gx);
            }
            Op::Relu(x) => {
                let xv = self.value(*x).data();
                let gx = zip_map(xv, gd, |t, gi| if t > 0.0 { gi } else { 0.0 });
                self.accumulate(grads, *x, Array::new(y.shape().to_vec(), gx)?);
            }
            Op::Gelu(x) => {
                let xv = self.value(*x).data();
                let gx = zip_map(xv, gd, |t, gi| gi * gelu_grad(t));
                self.accumulate(grads, *x, Array::new(y.shape().to_vec(), gx)?);
            }
            Op::Abs(x) => {
                let xv = self.value(*x).data();
                let gx = zip_map(xv, gd, |t, gi| gi * t.signum() * f64::from(t != 0.0));
                self.accumulate(grads, *x, Array::new(y.shape().to_vec(), gx)?);
            }
            Op::Log(x) => {
                let xv = self.value(*x).data();
                let gx = zip_map(xv, gd, |t, gi| gi / t);
                self.accumulate(grads, *x, Array::new(y.shape().to_vec(), gx)?);
            }
            Op::Exp(x) => {
                let gx = zip_map(y.data(), gd, |t, gi| gi * t);
                self.accumulate(grads, *x, Array::new(y.shape().to_vec(), gx)?);
            }
            Op::Scale(x, c) => {
                let gx = g.map(|gi| gi * c);
                self.accumulate(grads, *x, gx);
            }
            Op::AddScalar(x) => self.accumulate(grads, *x, g.clone()),
            Op::Powf(x, p) => {
                let xv = self.value(*x).data();
                let gx = zip_map(xv, gd, |t, gi| gi * p * t.powf(p - 1.0));
                self.accumulate(grads, *x, Array::new(y.shape().to_vec(), gx)?);
            }
            Op::Clamp(x, lo, hi) => {
                let xv = self.value(*x).data();
                let gx = zip_map(xv, gd, |t, gi| if t > *lo && t < *hi { gi } else { 0.0 });
                self.accumulate(grads, *x, Array::new(y.shape().to_vec(), gx)?);
            }
            Op::Softmax(x, axis) => {
                let (outer, n, inner) = axis_split(y.shape(), *axis);
                let yd = y.data();
                let mut gx = vec![0.0; yd.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let at = |j: usize| (o * n + j) * inner + i;
                        let dot: f64 = (0..n).map(|j| gd[at(j)] * yd[at(j)]).sum();
                        for j in 0..n {
                            gx[at(j)] = yd[at(j)] * (gd[at(j)] - dot);
                        }
                    }
                }
                self.accumulate(grads, *x, Array::new(y.shape().to_vec(), gx)?);
            }
            Op::LogSoftmax(x, axis) => {
                let (outer, n, inner) = axis_split(y.shape(), *axis);
                let yd = y.data();
                let mut gx = vec![0.0; yd.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let at = |j: usize| (o * n + j) * inner + i;
                        let total: f64 = (0..n).map(|j| gd[at(j)]).sum();
                        for j in 0..n {
                            gx[at(j)] = gd[at(j)] - yd[at(j)].exp() * total;
                        }
                    }
                }
                self.accumulate(grads, *x, Array::new(y.shape().to_vec(), gx)?);
            }
            Op::LayerNorm { x, axis, rstd } => {
                let (outer, n, inner) = axis_split(y.shape(), *axis);
                let yd = y.data();
                let mut gx = vec![0.0; yd.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let at = |j: usize| (o * n + j) * inner + i;
                        let mean_g = (0..n).map(|j| gd[at(j)]).sum::<f64>() / n as f64;
                        let mean_gy =
                            (0..n).map(|j| gd[at(j)] * yd[at(j)]).sum::<f64>() / n as f64;
                        let r = rstd[o * inner + i];
                        for j in 0..n {
                            gx[at(j)] = r * (gd[at(j)] - mean_g - yd[at(j)] * mean_gy);
                        }
                    }
                }
                self.accumulate(grads, *x, Array::new(y.shape().to_vec(), gx)?);
            }
            Op::Concat(xs, axis) => {
                let (outer, total, inner) = axis_split(y.shape(), *axis);
                let mut offset = 0;
                for &v in xs {
                    let shape = self.shape(v).to_vec();
                    let n = shape[*axis];
                    if self.nodes[v.0].needs_grad {
                        let mut gx = Vec::with_capacity(outer * n * inner);
                        for o in 0..outer {
                            let start = (o * total + offset) * inner;
                            gx.extend_from_slice(&gd[start..start + n * inner]);
                        }
                        self.accumulate(grads, v, Array::new(shape, gx)?);
                    }
                    offset += n;
                }
            }
            Op::Slice { x, axis, start } => {
                let xs = self.shape(*x).to_vec();
                let (outer, n, inner) = axis_split(&xs, *axis);
                let m = y.shape()[*axis];
                let mut gx = vec![0.0; outer * n * inner];
                for o in 0..outer {
                    gx[(o * n + start) * inner..(o * n + start + m) * inner]
                        .copy_from_slice(&gd[o * m * inner..(o + 1) * m * inner]);
                }
                self.accumulate(grads, *x, Array::new(xs, gx)?);
            }
            Op::GatherRows(x, idx) => {
                let xs = self.shape(*x).to_vec();
                let d = xs[1];
                let mut gx = vec![0.0; xs[0] * d];
                for (r, &i) in idx.iter().enumerate() {
                    for (dst, src) in gx[i * d..(i + 1) * d].iter_mut().zip(&gd[r * d..]) {
                        *dst += src;
                    }
                }
                self.accumulate(grads, *x, Array::new(xs, gx)?);
            }
        }
        Ok(())
    }

    fn matmul_backward(&self, a: Var, b: Var, gd: &[f64], grads: &mut [Option<Array>]) {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let (m, k) = (sa[sa.len() - 2], sa[sa.len() - 1]);
        let n = sb[sb.len() - 1];
        let batch: usize = sa[..sa.len() - 2].iter().product();
        let (va, vb) = (self.value(a).data(), self.value(b).data());
        let shared = sb.len() == 2;
        if self.nodes[a.0].needs_grad {
            let mut ga = vec![0.0; va.len()];
            if shared {
                gemm(batch * m, n, k, gd, false, vb, true, &mut ga, false);
            } else {
                for i in 0..batch {
                    gemm(
                        m,
                        n,
                        k,
                        &gd[i * m * n..],
                        false,
                        &vb[i * k * n..],
                        true,
                        &mut ga[i * m * k..],
                        false,
                    );
                }
            }
            self.accumulate(grads, a, Array::new(sa.to_vec(), ga).expect("matmul grad"));
        }
        if self.nodes[b.0].needs_grad {
            let mut gb = vec![0.0; vb.len()];
            if shared {
                gemm(k, batch * m, n, va, true, gd, false, &mut gb, false);
            } else {
                for i in 0..batch {
                    gemm(
                        k,
                        m,
                        n,
                        &va[i * m * k..],
                        true,
                        &gd[i * m * n..],
                        false,
                        &mut gb[i * k * n..],
                        false,
                    );
                }
            }
            self.accumulate(grads, b, Array::new(sb.to_vec(), gb).expect("matmul grad"));
        }
    }
}

enum PartnerIndex<'a> {
    Same(&'a [f64]),
    Strided {
        data: &'a [f64],
        strides: Vec<usize>,
        dims: Vec<usize>,
    },
}

impl<'a> PartnerIndex<'a> {
    fn into_fn(self) -> Box<dyn Fn(usize) -> f64 + 'a> {
        match self {
            PartnerIndex::Same(data) => Box::new(move |o| data[o]),
            PartnerIndex::Strided {
                data,
                strides,
                dims,
            } => Box::new(move |mut o| {
                let mut off = 0;
                for d in (0..dims.len()).rev() {
                    off += (o % dims[d]) * strides[d];
                    o /= dims[d];
                }
                data[off]
            }),
        }
    }
}

fn zip_map(x: &[f64], g: &[f64], f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    x.iter().zip(g).map(|(&a, &b)| f(a, b)).collect()
}

fn softmax_along(xs: &[f64], shape: &[usize], axis: usize, log: bool) -> Vec<f64> {
    let (outer, n, inner) = axis_split(shape, axis);
    let mut out = vec![0.0; xs.len()];
    if inner == 1 {
        for (src, dst) in xs.chunks_exact(n).zip(out.chunks_exact_mut(n)) {
            let max = src.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for (d, &x) in dst.iter_mut().zip(src) {
                *d = (x - max).exp();
                total += *d;
            }
            if log {
                let lse = max + total.ln();
                for (d, &x) in dst.iter_mut().zip(src) {
                    *d = x - lse;
                }
            } else {
                let r = 1.0 / total;
                dst.iter_mut().for_each(|d| *d *= r);
            }
        }
        return out;
    }
    for o in 0..outer {
        for i in 0..inner {
            let at = |j: usize| (o * n + j) * inner + i;
            let max = (0..n).map(|j| xs[at(j)]).fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for j in 0..n {
                let e = (xs[at(j)] - max).exp();
                out[at(j)] = e;
                total += e;
            }
            if log {
                let lse = max + total.ln();
                for j in 0..n {
                    out[at(j)] = xs[at(j)] - lse;
                }
            } else {
                for j in 0..n {
                    out[at(j)] /= total;
                }
            }
        }
    }
    out
}
