//! Refinement transformer: alternating self-attention over the 24 tokens and
//! per-token cross-attention restricted to each token's own visual anchors,
//! followed by decoder heads that emit an interaction gradient.

pub mod config;
pub mod ops;
pub mod weights;

use rayon::prelude::*;

use crate::body_model::{
    absorb_scale, orthonormalize_rot6d, BodyModel, HumanState, Rot6, NUM_BODY_JOINTS, NUM_HAND_JOINTS,
    NUM_SHAPE,
};
use crate::error::{GraftError, Result};
use crate::probes::anchors::{context_len, AnchorContext};
use config::NUM_TOKENS;
pub use config::ArchConfig;
use ops::{affine, affine_vec, gelu_in_place, layer_norm, softmax_in_place};
pub use weights::{GraftWeights, Init, Layout};
use weights::{Attention, Linear, Mlp, Norm};

/// Rows at or above this width are processed in parallel.
const PARALLEL_WIDTH: usize = 128;

pub fn apply_linear(w: &GraftWeights, l: &Linear, x: &[f64]) -> Vec<f64> {
    affine_vec(w.slice(l.w, l.out * l.inp), w.slice(l.b, l.out), x)
}

pub fn apply_mlp(w: &GraftWeights, m: &Mlp, x: &[f64]) -> Vec<f64> {
    let mut h = apply_linear(w, &m.hidden, x);
    gelu_in_place(&mut h);
    apply_linear(w, &m.output, &h)
}

fn apply_norm(w: &GraftWeights, n: &Norm, x: &[f64]) -> Vec<f64> {
    layer_norm(x, w.slice(n.gain, n.dim), w.slice(n.bias, n.dim))
}

/// Applies `l` to every row of a row-major matrix.
fn linear_rows(w: &GraftWeights, l: &Linear, x: &[f64]) -> Vec<f64> {
    let rows = x.len() / l.inp;
    let mut out = vec![0.0; rows * l.out];
    let (wm, b) = (w.slice(l.w, l.out * l.inp), w.slice(l.b, l.out));
    if l.out >= PARALLEL_WIDTH {
        out.par_chunks_mut(l.out)
            .zip(x.par_chunks(l.inp))
            .for_each(|(o, xi)| affine(wm, b, xi, o));
    } else {
        out.chunks_mut(l.out)
            .zip(x.chunks(l.inp))
            .for_each(|(o, xi)| affine(wm, b, xi, o));
    }
    out
}

/// Scaled dot-product attention of `q` (`nq x d`) over `k`, `v` (`nk x d`)
/// split into `heads` heads. When `probs` is given it receives the
/// attention weights, `[heads, nq, nk]`.
pub fn multi_head(
    q: &[f64],
    k: &[f64],
    v: &[f64],
    d: usize,
    heads: usize,
    mut probs: Option<&mut Vec<f64>>,
) -> Vec<f64> {
    let nq = q.len() / d;
    let nk = k.len() / d;
    let dh = d / heads;
    let inv = 1.0 / (dh as f64).sqrt();
    let mut out = vec![0.0; nq * d];
    let mut row = vec![0.0; nk];
    if let Some(p) = probs.as_deref_mut() {
        p.clear();
    }
    for h in 0..heads {
        let r = h * dh..(h + 1) * dh;
        for i in 0..nq {
            let qi = &q[i * d..(i + 1) * d][r.clone()];
            for (j, s) in row.iter_mut().enumerate() {
                *s = ops::dot(qi, &k[j * d..(j + 1) * d][r.clone()]) * inv;
            }
            softmax_in_place(&mut row);
            let oi = &mut out[i * d..(i + 1) * d][r.clone()];
            for (j, pj) in row.iter().enumerate() {
                for (o, vj) in oi.iter_mut().zip(&v[j * d..(j + 1) * d][r.clone()]) {
                    *o += pj * vj;
                }
            }
            if let Some(p) = probs.as_deref_mut() {
                p.extend_from_slice(&row);
            }
        }
    }
    out
}

fn self_attention(w: &GraftWeights, a: &Attention, x: &[f64]) -> Vec<f64> {
    let d = w.config().width;
    let q = linear_rows(w, &a.q, x);
    let k = linear_rows(w, &a.k, x);
    let v = linear_rows(w, &a.v, x);
    let mixed = multi_head(&q, &k, &v, d, w.config().heads, None);
    linear_rows(w, &a.o, &mixed)
}

fn cross_attention(w: &GraftWeights, a: &Attention, query: &[f64], context: &[f64]) -> Vec<f64> {
    let d = w.config().width;
    let q = apply_linear(w, &a.q, query);
    let k = linear_rows(w, &a.k, context);
    let v = linear_rows(w, &a.v, context);
    let mixed = multi_head(&q, &k, &v, d, w.config().heads, None);
    apply_linear(w, &a.o, &mixed)
}

/// Intermediate values kept for inspection.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ForwardTrace {
    /// Tokens right after the first cross-attention residual.
    pub after_first_cross: Option<Vec<f64>>,
}

pub fn transformer_forward(tokens: &[f64], context: Option<&AnchorContext>, w: &GraftWeights) -> Result<Vec<f64>> {
    transformer_forward_traced(tokens, context, w).map(|(t, _)| t)
}

pub fn transformer_forward_traced(
    tokens: &[f64],
    context: Option<&AnchorContext>,
    w: &GraftWeights,
) -> Result<(Vec<f64>, ForwardTrace)> {
    let d = w.config().width;
    if tokens.len() != NUM_TOKENS * d {
        return Err(GraftError::ShapeMismatch(format!(
            "expected {NUM_TOKENS}x{d} tokens, got {} values",
            tokens.len()
        )));
    }
    if let Some(ctx) = context {
        if ctx.features.len() != NUM_TOKENS {
            return Err(GraftError::ShapeMismatch(format!("context for {} tokens", ctx.features.len())));
        }
        for (t, f) in ctx.features.iter().enumerate() {
            if f.len() != context_len(t) * d {
                return Err(GraftError::ShapeMismatch(format!(
                    "token {t} has {} context values, expected {}",
                    f.len(),
                    context_len(t) * d
                )));
            }
        }
    }
    let mut x = tokens.to_vec();
    let mut trace = ForwardTrace::default();
    for block in &w.layout().blocks {
        let normed: Vec<f64> = x.chunks(d).flat_map(|r| apply_norm(w, &block.norm_self, r)).collect();
        let attn = self_attention(w, &block.self_attn, &normed);
        x.iter_mut().zip(&attn).for_each(|(a, b)| *a += b);

        if let Some(ctx) = context {
            let update = |(row, f): (&mut [f64], &Vec<f64>)| {
                let q = apply_norm(w, &block.norm_cross, row);
                let c = cross_attention(w, &block.cross_attn, &q, f);
                row.iter_mut().zip(&c).for_each(|(a, b)| *a += b);
            };
            if d >= PARALLEL_WIDTH {
                x.par_chunks_mut(d).zip(ctx.features.par_iter()).for_each(update);
            } else {
                x.chunks_mut(d).zip(ctx.features.iter()).for_each(update);
            }
            if trace.after_first_cross.is_none() {
                trace.after_first_cross = Some(x.clone());
            }
        }

        let ffn = |row: &mut [f64]| {
            let h = apply_mlp(w, &block.ffn, &apply_norm(w, &block.norm_ffn, row));
            row.iter_mut().zip(&h).for_each(|(a, b)| *a += b);
        };
        if d >= PARALLEL_WIDTH {
            x.par_chunks_mut(d).for_each(ffn);
        } else {
            x.chunks_mut(d).for_each(ffn);
        }
    }
    Ok((x, trace))
}

/// Per-step corrective update predicted by the network.
#[derive(Clone, Debug, PartialEq)]
pub struct InteractionGradient {
    pub d_global: Rot6,
    pub d_body: [Rot6; NUM_BODY_JOINTS],
    pub d_hands: [[Rot6; NUM_HAND_JOINTS]; 2],
    pub d_translation: [f64; 3],
    pub d_shape: [f64; NUM_SHAPE],
    pub scale: f64,
}

impl InteractionGradient {
    pub fn zero() -> Self {
        Self {
            d_global: [0.0; 6],
            d_body: [[0.0; 6]; NUM_BODY_JOINTS],
            d_hands: [[[0.0; 6]; NUM_HAND_JOINTS]; 2],
            d_translation: [0.0; 3],
            d_shape: [0.0; NUM_SHAPE],
            scale: 1.0,
        }
    }

    pub fn is_finite(&self) -> bool {
        let rots = std::iter::once(&self.d_global)
            .chain(&self.d_body)
            .chain(self.d_hands.iter().flatten());
        rots.flatten()
            .chain(&self.d_translation)
            .chain(&self.d_shape)
            .all(|v| v.is_finite())
            && self.scale.is_finite()
            && self.scale > 0.0
    }
}

fn to_rot6(v: &[f64]) -> Rot6 {
    v.try_into().expect("six values")
}

/// Hidden activation and raw output of one head evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct HeadActivation {
    /// Hidden layer before the GELU.
    pub pre: Vec<f64>,
    pub hidden: Vec<f64>,
    pub output: Vec<f64>,
}

fn head_activation(w: &GraftWeights, m: &Mlp, x: &[f64]) -> HeadActivation {
    let pre = apply_linear(w, &m.hidden, x);
    let mut hidden = pre.clone();
    gelu_in_place(&mut hidden);
    let output = apply_linear(w, &m.output, &hidden);
    HeadActivation { pre, hidden, output }
}

/// Every head evaluation of one decode: the shared body head once per body
/// token, the hand head once per hand, the rest on the full-body token.
#[derive(Clone, Debug, PartialEq)]
pub struct HeadOutputs {
    pub body: Vec<HeadActivation>,
    pub hand: [HeadActivation; 2],
    pub global: HeadActivation,
    pub translation: HeadActivation,
    pub shape: HeadActivation,
    pub scale: HeadActivation,
}

impl HeadOutputs {
    /// Token read by evaluation `e` of head `name`.
    pub fn input_token(name: &str, e: usize) -> usize {
        match name {
            "body" => e,
            "hand" => NUM_BODY_JOINTS + e,
            _ => NUM_TOKENS - 1,
        }
    }

    /// Evaluations of the head called `name` (see [`weights::Heads::all`]).
    pub fn by_name(&self, name: &str) -> &[HeadActivation] {
        match name {
            "body" => &self.body,
            "hand" => &self.hand,
            "global" => std::slice::from_ref(&self.global),
            "translation" => std::slice::from_ref(&self.translation),
            "shape" => std::slice::from_ref(&self.shape),
            "scale" => std::slice::from_ref(&self.scale),
            _ => &[],
        }
    }

    pub fn by_name_mut(&mut self, name: &str) -> &mut [HeadActivation] {
        match name {
            "body" => &mut self.body,
            "hand" => &mut self.hand,
            "global" => std::slice::from_mut(&mut self.global),
            "translation" => std::slice::from_mut(&mut self.translation),
            "shape" => std::slice::from_mut(&mut self.shape),
            "scale" => std::slice::from_mut(&mut self.scale),
            _ => &mut [],
        }
    }

    /// The update these outputs encode; the scale head is read in log space.
    pub fn to_gradient(&self) -> InteractionGradient {
        InteractionGradient {
            d_global: to_rot6(&self.global.output),
            d_body: std::array::from_fn(|k| to_rot6(&self.body[k].output)),
            d_hands: std::array::from_fn(|side| {
                let out = &self.hand[side].output;
                std::array::from_fn(|j| to_rot6(&out[6 * j..6 * j + 6]))
            }),
            d_translation: self.translation.output[..].try_into().expect("three values"),
            d_shape: self.shape.output[..].try_into().expect("shape values"),
            scale: libm::exp(self.scale.output[0]),
        }
    }
}

/// Evaluates the decoder heads on the refined tokens.
pub fn decode_heads(refined: &[f64], w: &GraftWeights) -> Result<HeadOutputs> {
    let d = w.config().width;
    if refined.len() != NUM_TOKENS * d {
        return Err(GraftError::ShapeMismatch(format!(
            "expected {NUM_TOKENS}x{d} refined tokens, got {} values",
            refined.len()
        )));
    }
    let h = &w.layout().heads;
    let tok = |k: usize| &refined[k * d..(k + 1) * d];
    let full = tok(NUM_TOKENS - 1);
    Ok(HeadOutputs {
        body: (0..NUM_BODY_JOINTS).map(|k| head_activation(w, &h.body, tok(k))).collect(),
        hand: std::array::from_fn(|side| head_activation(w, &h.hand, tok(NUM_BODY_JOINTS + side))),
        global: head_activation(w, &h.global, full),
        translation: head_activation(w, &h.translation, full),
        shape: head_activation(w, &h.shape, full),
        scale: head_activation(w, &h.scale, full),
    })
}

/// Reads the update off the refined tokens with the decoder heads.
pub fn decode(refined: &[f64], w: &GraftWeights) -> Result<InteractionGradient> {
    decode_heads(refined, w).map(|h| h.to_gradient())
}

fn add_rot(r: &Rot6, d: &Rot6) -> Result<Rot6> {
    // A zero update leaves the block untouched, canonical or not.
    if d.iter().all(|v| *v == 0.0) {
        return Ok(*r);
    }
    let mut sum = *r;
    sum.iter_mut().zip(d).for_each(|(a, b)| *a += b);
    orthonormalize_rot6d(&sum)
}

/// `theta + delta` in 6D with Gram–Schmidt, then the scale folded into
/// shape and translation.
pub fn apply_gradient(state: &HumanState, g: &InteractionGradient, model: &BodyModel) -> Result<HumanState> {
    let mut out = state.clone();
    out.global_orient = add_rot(&state.global_orient, &g.d_global)?;
    for (r, d) in out.body_pose.iter_mut().zip(&g.d_body) {
        *r = add_rot(r, d)?;
    }
    for (hand, dh) in [&mut out.left_hand_pose, &mut out.right_hand_pose].into_iter().zip(&g.d_hands) {
        for (r, d) in hand.iter_mut().zip(dh) {
            *r = add_rot(r, d)?;
        }
    }
    for (t, d) in out.translation.iter_mut().zip(&g.d_translation) {
        if *d != 0.0 {
            *t += d;
        }
    }
    for (b, d) in out.shape.iter_mut().zip(&g.d_shape) {
        if *d != 0.0 {
            *b += d;
        }
    }
    absorb_scale(&out, g.scale, model)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn attention_rows_are_convex() {
        let d = 8;
        let q: Vec<f64> = (0..3 * d).map(|i| (i as f64 * 0.37).sin()).collect();
        let k: Vec<f64> = (0..5 * d).map(|i| (i as f64 * 0.11).cos() * 3.0).collect();
        let mut p = Vec::new();
        multi_head(&q, &k, &k, d, 2, Some(&mut p));
        assert_eq!(p.len(), 2 * 3 * 5);
        for row in p.chunks(5) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(row.iter().all(|v| *v >= 0.0));
        }
    }

    #[test]
    fn zero_weights_are_a_residual_identity() {
        let w = GraftWeights::new(ArchConfig::micro(), Init::Zeros).unwrap();
        let x: Vec<f64> = (0..NUM_TOKENS * 32).map(|i| (i as f64).sin()).collect();
        assert_eq!(transformer_forward(&x, None, &w).unwrap(), x);
    }

    #[test]
    fn zero_heads_decode_to_a_no_op() {
        let w = GraftWeights::new(ArchConfig::micro(), Init::Random { seed: 2, zero_heads: true }).unwrap();
        let x: Vec<f64> = (0..NUM_TOKENS * 32).map(|i| (i as f64 * 0.3).cos()).collect();
        assert_eq!(decode(&x, &w).unwrap(), InteractionGradient::zero());
    }

    #[test]
    fn decoded_shapes() {
        let w = GraftWeights::new(ArchConfig::micro(), Init::Random { seed: 3, zero_heads: false }).unwrap();
        let x: Vec<f64> = (0..NUM_TOKENS * 32).map(|i| (i as f64 * 0.7).sin()).collect();
        let g = decode(&x, &w).unwrap();
        assert_eq!(g.d_body.iter().flatten().count(), 21 * 6);
        assert_eq!(g.d_hands.iter().flatten().flatten().count(), 2 * 15 * 6);
        assert!(g.is_finite());
    }
}
