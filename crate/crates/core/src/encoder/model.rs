use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::params::{BoundParams, ParamId, ParamSet};
use super::EncoderConfig;
use crate::autodiff::{randn, Array, Tape, Var};
use crate::dsp::{TargetKind, Waveform};
use crate::error::{Error, Result};

const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy)]
struct Linear {
    w: ParamId,
    b: ParamId,
}

#[derive(Debug, Clone, Copy)]
struct Norm {
    g: ParamId,
    b: ParamId,
}

#[derive(Debug, Clone, Copy)]
struct Block {
    ln1: Norm,
    qkv: Linear,
    out: Linear,
    ln2: Norm,
    ff1: Linear,
    ff2: Linear,
}

#[derive(Debug, Clone, Copy)]
struct FrameHead {
    kind: TargetKind,
    conv1: Linear,
    conv2: Linear,
}

#[derive(Debug, Clone)]
struct Layout {
    stem_conv: Linear,
    stem_point: Linear,
    proj: Linear,
    encoder: Vec<Block>,
    decoder: Vec<Block>,
    dec_out: Linear,
    heads: Vec<FrameHead>,
    sent1: Linear,
    sent2: Linear,
}

/// Per-frame vectors `[n_frames × d_model]` for one utterance.
#[derive(Debug, Clone, PartialEq)]
pub struct Representation {
    pub values: Array,
}

impl Representation {
    pub fn n_frames(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn dim(&self) -> usize {
        self.values.shape()[1]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let d = self.dim();
        &self.values.data()[i * d..(i + 1) * d]
    }

    /// Mean over frames.
    pub fn mean_pooled(&self) -> Vec<f64> {
        let (n, d) = (self.n_frames(), self.dim());
        let mut out = vec![0.0; d];
        for i in 0..n {
            for (o, v) in out.iter_mut().zip(self.row(i)) {
                *o += v / n as f64;
            }
        }
        out
    }
}

/// Conv stem, Transformer encoder, waveform decoder, four frame-feature
/// heads and the sentence projection head.
#[derive(Debug, Clone)]
pub struct MgfModel {
    pub config: EncoderConfig,
    pub params: ParamSet,
    layout: Layout,
}

struct Init<'a> {
    params: &'a mut ParamSet,
    rng: ChaCha8Rng,
}

impl Init<'_> {
    fn weight(&mut self, name: String, shape: &[usize], fan_in: usize) -> ParamId {
        let w = randn(&mut self.rng, shape, (1.0 / fan_in as f64).sqrt());
        self.params.insert(name, w)
    }

    fn zeros(&mut self, name: String, shape: &[usize]) -> ParamId {
        self.params.insert(name, Array::zeros(shape))
    }

    fn linear(&mut self, name: &str, fan_in: usize, fan_out: usize) -> Linear {
        Linear {
            w: self.weight(format!("{name}.w"), &[fan_in, fan_out], fan_in),
            b: self.zeros(format!("{name}.b"), &[fan_out]),
        }
    }

    fn conv(&mut self, name: &str, kernel: usize, c_in: usize, c_out: usize) -> Linear {
        Linear {
            w: self.weight(format!("{name}.w"), &[kernel, c_in, c_out], kernel * c_in),
            b: self.zeros(format!("{name}.b"), &[c_out]),
        }
    }

    fn norm(&mut self, name: &str, d: usize) -> Norm {
        Norm {
            g: self.params.insert(format!("{name}.g"), Array::full(&[d], 1.0)),
            b: self.zeros(format!("{name}.b"), &[d]),
        }
    }

    fn block(&mut self, name: &str, d: usize, d_ff: usize) -> Block {
        Block {
            ln1: self.norm(&format!("{name}.ln1"), d),
            qkv: self.linear(&format!("{name}.attn.qkv"), d, 3 * d),
            out: self.linear(&format!("{name}.attn.out"), d, d),
            ln2: self.norm(&format!("{name}.ln2"), d),
            ff1: self.linear(&format!("{name}.ff1"), d, d_ff),
            ff2: self.linear(&format!("{name}.ff2"), d_ff, d),
        }
    }
}

/// Sinusoidal position table `[n_frames × d]`.
pub fn positional_encoding(n_frames: usize, d: usize) -> Array {
    let mut pe = vec![0.0; n_frames * d];
    for t in 0..n_frames {
        for i in 0..d {
            let rate = 10000f64.powf(-((i / 2 * 2) as f64) / d as f64);
            let angle = t as f64 * rate;
            pe[t * d + i] = if i % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    Array::new(vec![n_frames, d], pe).expect("positional table")
}

impl MgfModel {
    /// Randomly initialised model; identical seeds give identical weights.
    pub fn new(config: EncoderConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut params = ParamSet::new();
        let c = &config;
        let layout = {
            let mut init = Init {
                params: &mut params,
                rng: ChaCha8Rng::seed_from_u64(seed),
            };
            let stem_conv = init.conv("stem.conv", c.stem_kernel, 1, c.stem_channels);
            let stem_point = init.linear("stem.point", c.stem_channels, c.stem_channels);
            let proj = init.linear("encoder.proj", c.stem_channels, c.d_model);
            let encoder = (0..c.encoder_blocks)
                .map(|i| init.block(&format!("encoder.block{i}"), c.d_model, c.d_ff))
                .collect();
            let decoder = (0..c.decoder_blocks)
                .map(|i| init.block(&format!("decoder.block{i}"), c.d_model, c.d_ff))
                .collect();
            let dec_out = Linear {
                w: init.weight(
                    "decoder.out.w".into(),
                    &[c.d_model, c.stem_kernel],
                    c.d_model,
                ),
                b: init.zeros("decoder.out.b".into(), &[1]),
            };
            let heads = TargetKind::ALL
                .iter()
                .map(|&kind| {
                    let name = format!("head.{}", kind.name().to_ascii_lowercase());
                    FrameHead {
                        kind,
                        conv1: init.conv(&format!("{name}.conv1"), 3, c.d_model, c.d_model),
                        conv2: init.conv(&format!("{name}.conv2"), 3, c.d_model, kind.dim()),
                    }
                })
                .collect();
            let sent1 = init.linear("sentence.fc1", c.d_model, c.d_model);
            let sent2 = init.linear("sentence.fc2", c.d_model, c.proj_dim);
            Layout {
                stem_conv,
                stem_point,
                proj,
                encoder,
                decoder,
                dec_out,
                heads,
                sent1,
                sent2,
            }
        };
        Ok(Self {
            config,
            params,
            layout,
        })
    }

    /// Model with `config`'s layout and the given values, which must match
    /// it name for name and shape for shape.
    pub fn with_params(config: EncoderConfig, params: &ParamSet) -> Result<Self> {
        let mut model = Self::new(config, 0)?;
        model.params.assign_from(params)?;
        Ok(model)
    }

    /// Names of the parameters belonging to the frame head for `kind`.
    pub fn head_param_names(&self, kind: TargetKind) -> Vec<String> {
        let prefix = format!("head.{}.", kind.name().to_ascii_lowercase());
        self.params
            .names()
            .iter()
            .filter(|n| n.starts_with(&prefix))
            .cloned()
            .collect()
    }

    /// Whether a parameter belongs to the stem or encoder trunk.
    pub fn is_trunk_param(name: &str) -> bool {
        name.starts_with("stem.") || name.starts_with("encoder.")
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> BoundParams {
        self.params.bind(tape, trainable)
    }

    fn linear(&self, tape: &mut Tape, p: &BoundParams, l: Linear, x: Var) -> Result<Var> {
        let y = tape.matmul(x, p.var(l.w))?;
        tape.add(y, p.var(l.b))
    }

    fn norm(&self, tape: &mut Tape, p: &BoundParams, n: Norm, x: Var) -> Result<Var> {
        let axis = tape.shape(x).len() - 1;
        let y = tape.layer_norm(x, axis, LN_EPS)?;
        let y = tape.mul(y, p.var(n.g))?;
        tape.add(y, p.var(n.b))
    }

    fn attention(&self, tape: &mut Tape, p: &BoundParams, blk: &Block, x: Var) -> Result<Var> {
        let (b, t, d) = {
            let s = tape.shape(x);
            (s[0], s[1], s[2])
        };
        let h = self.config.heads;
        let dh = d / h;
        let qkv = self.linear(tape, p, blk.qkv, x)?;
        let split = |tape: &mut Tape, which: usize, axes: &[usize]| -> Result<Var> {
            let part = tape.slice(qkv, 2, which * d, (which + 1) * d)?;
            let part = tape.reshape(part, &[b, t, h, dh])?;
            let part = tape.permute(part, axes)?;
            let s = tape.shape(part).to_vec();
            tape.reshape(part, &[b * h, s[2], s[3]])
        };
        let q = split(tape, 0, &[0, 2, 1, 3])?;
        // scaling q is cheaper than scaling the T×T scores
        let q = tape.scale(q, 1.0 / (dh as f64).sqrt())?;
        let k = split(tape, 1, &[0, 2, 3, 1])?;
        let v = split(tape, 2, &[0, 2, 1, 3])?;
        let scores = tape.matmul(q, k)?;
        let att = tape.softmax(scores, 2)?;
        let ctx = tape.matmul(att, v)?;
        let ctx = tape.reshape(ctx, &[b, h, t, dh])?;
        let ctx = tape.permute(ctx, &[0, 2, 1, 3])?;
        let ctx = tape.reshape(ctx, &[b, t, d])?;
        self.linear(tape, p, blk.out, ctx)
    }

    fn block(&self, tape: &mut Tape, p: &BoundParams, blk: &Block, x: Var) -> Result<Var> {
        let h = self.norm(tape, p, blk.ln1, x)?;
        let a = self.attention(tape, p, blk, h)?;
        let x = tape.add(x, a)?;
        let h = self.norm(tape, p, blk.ln2, x)?;
        let f = self.linear(tape, p, blk.ff1, h)?;
        let f = tape.relu(f)?;
        let f = self.linear(tape, p, blk.ff2, f)?;
        tape.add(x, f)
    }

    /// Waveforms `[B, L]` to stem features `[B, T, stem_channels]`: strided
    /// conv, then pointwise conv + ReLU.
    pub fn stem_forward(&self, tape: &mut Tape, p: &BoundParams, waves: Var) -> Result<Var> {
        let c = &self.config;
        let shape = tape.shape(waves).to_vec();
        if shape.len() != 2 {
            return Err(Error::shape("stem", format!("expected [B, L], got {shape:?}")));
        }
        if c.frames_for(shape[1]).is_none() {
            return Err(Error::InputTooShort {
                len: shape[1],
                need: c.stem_kernel - 2 * c.stem_pad,
            });
        }
        let x = tape.reshape(waves, &[shape[0], shape[1], 1])?;
        let s = self.layout.stem_conv;
        let x = tape.conv1d(x, p.var(s.w), Some(p.var(s.b)), c.stem_stride, c.stem_pad)?;
        let x = self.linear(tape, p, self.layout.stem_point, x)?;
        tape.relu(x)
    }

    /// Stem features to the MGF representation `[B, T, d_model]`: pointwise
    /// projection, sinusoidal positions, pre-norm Transformer blocks.
    pub fn encode(&self, tape: &mut Tape, p: &BoundParams, stem: Var) -> Result<Var> {
        let t = tape.shape(stem)[1];
        let x = self.linear(tape, p, self.layout.proj, stem)?;
        let pe = tape.constant(positional_encoding(t, self.config.d_model));
        let mut x = tape.add(x, pe)?;
        for blk in &self.layout.encoder {
            x = self.block(tape, p, blk, x)?;
        }
        Ok(x)
    }

    /// Stem + encoder.
    pub fn represent_batch(&self, tape: &mut Tape, p: &BoundParams, waves: Var) -> Result<Var> {
        let s = self.stem_forward(tape, p, waves)?;
        self.encode(tape, p, s)
    }

    /// Decoder Transformer blocks, then a learned transposed conv
    /// (kernel 320, stride 160, pad 80) back to `[B, 160·T]` samples.
    pub fn decode_waveform(&self, tape: &mut Tape, p: &BoundParams, rep: Var) -> Result<Var> {
        let c = &self.config;
        let mut x = rep;
        for blk in &self.layout.decoder {
            x = self.block(tape, p, blk, x)?;
        }
        let frames = tape.matmul(x, p.var(self.layout.dec_out.w))?;
        let wave = tape.overlap_add(frames, c.stem_stride, c.stem_pad)?;
        tape.add(wave, p.var(self.layout.dec_out.b))
    }

    /// Two same-padded kernel-3 convs with ReLU between; `[B, T, dim(kind)]`.
    pub fn head_frame_features(
        &self,
        tape: &mut Tape,
        p: &BoundParams,
        rep: Var,
        kind: TargetKind,
    ) -> Result<Var> {
        let head = self
            .layout
            .heads
            .iter()
            .find(|h| h.kind == kind)
            .ok_or_else(|| Error::UnknownKind(kind.to_string()))?;
        let x = tape.conv1d(rep, p.var(head.conv1.w), Some(p.var(head.conv1.b)), 1, 1)?;
        let x = tape.relu(x)?;
        tape.conv1d(x, p.var(head.conv2.w), Some(p.var(head.conv2.b)), 1, 1)
    }

    /// Mean over frames, two pointwise maps with ReLU between, then L2
    /// normalisation (when configured): `[B, proj_dim]`.
    pub fn head_sentence(&self, tape: &mut Tape, p: &BoundParams, rep: Var) -> Result<Var> {
        if tape.shape(rep).get(1).copied().unwrap_or(0) == 0 {
            return Err(Error::EmptyRepresentation);
        }
        let pooled = tape.mean_axis(rep, 1)?;
        let z = self.linear(tape, p, self.layout.sent1, pooled)?;
        let z = tape.relu(z)?;
        let z = self.linear(tape, p, self.layout.sent2, z)?;
        if !self.config.normalize_projection {
            return Ok(z);
        }
        l2_normalize_rows(tape, z)
    }

    /// Clean forward pass of one waveform with frozen weights.
    pub fn represent(&self, wave: &Waveform) -> Result<Representation> {
        let mut tape = Tape::new();
        let p = self.bind(&mut tape, false);
        let x = tape.constant(Array::new(vec![1, wave.len()], wave.samples().to_vec())?);
        let rep = self.represent_batch(&mut tape, &p, x)?;
        let shape = tape.shape(rep).to_vec();
        let values = tape.value(rep).clone().reshaped(&shape[1..])?;
        Ok(Representation { values })
    }
}

/// Divides each row of `[N, D]` by its L2 norm.
pub fn l2_normalize_rows(tape: &mut Tape, z: Var) -> Result<Var> {
    let n = tape.shape(z)[0];
    let sq = tape.mul(z, z)?;
    let ss = tape.sum_axis(sq, 1)?;
    let ss = tape.add_scalar(ss, 1e-12)?;
    let norm = tape.powf(ss, 0.5)?;
    let norm = tape.reshape(norm, &[n, 1])?;
    tape.div(z, norm)
}
