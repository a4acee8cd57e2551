use nalgebra::Vector3;
use serde::Serialize;

use crate::body_model::{BodyModel, HumanState, LEFT_HAND_SLOT, NUM_STATE_JOINTS, RIGHT_HAND_SLOT};
use crate::error::{GraftError, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub vertex: f64,
    pub normalized: f64,
    pub global: f64,
    pub body: f64,
    pub left_hand: f64,
    pub right_hand: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            vertex: 7.0,
            normalized: 5.0,
            global: 5.0,
            body: 2.0,
            left_hand: 0.5,
            right_hand: 0.5,
        }
    }
}

impl LossWeights {
    pub fn rotation_weight(&self, slot: usize) -> f64 {
        match slot {
            0 => self.global,
            s if s < LEFT_HAND_SLOT => self.body,
            s if s < RIGHT_HAND_SLOT => self.left_hand,
            _ => self.right_hand,
        }
    }
}

/// Weighted loss terms; `total` is their sum.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct LossBreakdown {
    pub rotation: f64,
    pub vertex: f64,
    pub normalized: f64,
    pub total: f64,
}

fn centered(v: &[Vector3<f64>]) -> Vec<Vector3<f64>> {
    let mean = v.iter().sum::<Vector3<f64>>() / v.len() as f64;
    v.iter().map(|p| p - mean).collect()
}

fn sq_dist_sum(a: &[Vector3<f64>], b: &[Vector3<f64>]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).norm_squared()).sum()
}

/// Ground truth with its posed vertices cached, for repeated loss
/// evaluation against the same target.
#[derive(Clone, Debug)]
pub struct LossTarget<'a> {
    pub gt: &'a HumanState,
    model: &'a BodyModel,
    vertices: Vec<Vector3<f64>>,
    centered: Vec<Vector3<f64>>,
}

impl<'a> LossTarget<'a> {
    pub fn new(model: &'a BodyModel, gt: &'a HumanState) -> Result<Self> {
        let vertices = model.forward(gt)?.vertices;
        let centered = centered(&vertices);
        Ok(Self {
            gt,
            model,
            vertices,
            centered,
        })
    }

    /// Loss of a single predicted state.
    pub fn state_loss(&self, p: &HumanState, w: &LossWeights) -> Result<LossBreakdown> {
        let mut out = LossBreakdown::default();
        for slot in 0..NUM_STATE_JOINTS {
            let d: f64 = p
                .rotation(slot)
                .iter()
                .zip(self.gt.rotation(slot))
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            out.rotation += w.rotation_weight(slot) * d;
        }
        let v = self.model.forward(p)?.vertices;
        out.vertex = w.vertex * sq_dist_sum(&v, &self.vertices);
        out.normalized = w.normalized * sq_dist_sum(&centered(&v), &self.centered);
        out.total = out.rotation + out.vertex + out.normalized;
        Ok(out)
    }
}

/// Rollout loss summed over the predicted states: per-group 6D rotation
/// error, camera-frame vertex error and mean-centered vertex error.
pub fn step_loss(preds: &[HumanState], gt: &HumanState, model: &BodyModel, w: &LossWeights) -> Result<LossBreakdown> {
    if preds.is_empty() {
        return Err(GraftError::DimensionMismatch("no predicted states".into()));
    }
    let target = LossTarget::new(model, gt)?;
    let mut out = LossBreakdown::default();
    for p in preds {
        let l = target.state_loss(p, w)?;
        out.rotation += l.rotation;
        out.vertex += l.vertex;
        out.normalized += l.normalized;
    }
    out.total = out.rotation + out.vertex + out.normalized;
    Ok(out)
}
