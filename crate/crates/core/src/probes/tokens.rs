use super::{ProbeRecord, ProbeSet, TokenAnchors};
use crate::body_model::{HumanState, NUM_BODY_JOINTS};
use crate::error::{GraftError, Result};
use crate::network::config::NUM_TOKENS;
use crate::network::{apply_mlp, GraftWeights};

pub const LEFT_HAND_TOKEN: usize = NUM_BODY_JOINTS;
pub const RIGHT_HAND_TOKEN: usize = NUM_BODY_JOINTS + 1;
pub const FULL_BODY_TOKEN: usize = NUM_BODY_JOINTS + 2;

/// `[sin(Bp); cos(Bp); p]` for a row-major `[f, 3]` frequency matrix.
pub fn fourier_encode(b: &[f64], p: &[f64; 3]) -> Vec<f64> {
    let f = b.len() / 3;
    let mut out = vec![0.0; 2 * f + 3];
    for (i, row) in b.chunks_exact(3).enumerate() {
        let x = row[0] * p[0] + row[1] * p[1] + row[2] * p[2];
        out[i] = libm::sin(x);
        out[f + i] = libm::cos(x);
    }
    out[2 * f..].copy_from_slice(p);
    out
}

/// The 24 embedded tokens with the geometry they were built from.
#[derive(Clone, Debug, PartialEq)]
pub struct HsiTokenSet {
    /// Row-major `[NUM_TOKENS, width]`.
    pub tokens: Vec<f64>,
    pub width: usize,
    pub probes: ProbeSet,
    pub anchors: TokenAnchors,
}

impl HsiTokenSet {
    pub fn token(&self, k: usize) -> &[f64] {
        &self.tokens[k * self.width..(k + 1) * self.width]
    }
}

fn encode_probe(w: &GraftWeights, r: &ProbeRecord) -> Vec<f64> {
    let l = w.layout();
    let e = w.config().encoding_dim();
    let f = w.config().fourier_freqs * 3;
    let mut out = Vec::with_capacity(3 * e);
    out.extend(fourier_encode(w.slice(l.fourier[0], f), &r.offset));
    out.extend(fourier_encode(w.slice(l.fourier[1], f), &r.normal));
    out.extend(fourier_encode(w.slice(l.fourier[2], f), &r.body_relative));
    out
}

/// Lifts each token's probe encodings and parameter context to the model
/// width. Output is row-major `[NUM_TOKENS, width]`.
pub fn tokenize(state: &HumanState, probes: &ProbeSet, w: &GraftWeights) -> Result<Vec<f64>> {
    if probes.body.len() != NUM_BODY_JOINTS
        || probes.hands.iter().any(|h| h.len() != crate::network::config::HAND_PROBES)
        || probes.surface.len() != crate::body_model::NUM_SURFACE_PROBES
    {
        return Err(GraftError::WeightShapeMismatch(
            "probe groups must be 21 body, 2 x 5 hand and 27 surface".into(),
        ));
    }
    let l = w.layout();
    let d = w.config().width;
    let mut tokens = Vec::with_capacity(NUM_TOKENS * d);

    for (k, r) in probes.body.iter().enumerate() {
        let mut x = encode_probe(w, r);
        x.extend_from_slice(state.rotation(k + 1));
        tokens.extend(apply_mlp(w, &l.tok_body, &x));
    }
    let compressed = |recs: &[ProbeRecord]| -> Vec<f64> {
        recs.iter()
            .flat_map(|r| apply_mlp(w, &l.probe_mlp, &encode_probe(w, r)))
            .collect()
    };
    for (side, pose) in [&state.left_hand_pose, &state.right_hand_pose].into_iter().enumerate() {
        let mut x = compressed(&probes.hands[side]);
        x.extend(pose.iter().flatten());
        tokens.extend(apply_mlp(w, &l.tok_hand, &x));
    }
    let mut x = compressed(&probes.surface);
    x.extend_from_slice(&state.global_orient);
    x.extend_from_slice(&state.translation);
    x.extend_from_slice(&state.shape);
    tokens.extend(apply_mlp(w, &l.tok_full, &x));

    for (t, e) in tokens.iter_mut().zip(w.slice(l.token_embed, NUM_TOKENS * d)) {
        *t += e;
    }
    Ok(tokens)
}
