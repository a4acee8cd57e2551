use nalgebra::Vector3;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::body_model::{
    axis_angle_to_matrix, matrix_to_rot6d, rot6d_to_matrix, HumanState, NUM_STATE_JOINTS,
};
use crate::error::Result;

/// Noise model for training queries.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PerturbationSpec {
    pub translation_m: f64,
    pub shape: f64,
    pub joint_deg: f64,
    pub global_deg: f64,
    /// Probability of returning the ground truth unchanged.
    pub clean_prob: f64,
}

impl Default for PerturbationSpec {
    fn default() -> Self {
        Self {
            translation_m: 0.1,
            shape: 0.03,
            joint_deg: 7.0,
            global_deg: 3.0,
            clean_prob: 0.2,
        }
    }
}

impl PerturbationSpec {
    pub fn none() -> Self {
        Self {
            translation_m: 0.0,
            shape: 0.0,
            joint_deg: 0.0,
            global_deg: 0.0,
            clean_prob: 0.0,
        }
    }

    /// Multiplies every standard deviation by `k`.
    pub fn scaled(&self, k: f64) -> Self {
        Self {
            translation_m: self.translation_m * k,
            shape: self.shape * k,
            joint_deg: self.joint_deg * k,
            global_deg: self.global_deg * k,
            clean_prob: self.clean_prob,
        }
    }
}

fn normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

/// Rotation about a uniformly random axis by an angle drawn from N(0, sigma).
fn random_rotation<R: Rng + ?Sized>(rng: &mut R, sigma_rad: f64) -> nalgebra::Matrix3<f64> {
    let axis = loop {
        let v = Vector3::new(normal(rng), normal(rng), normal(rng));
        let n = v.norm();
        if n > 1e-12 {
            break v / n;
        }
    };
    axis_angle_to_matrix(&(axis * (normal(rng) * sigma_rad)))
}

/// A perturbed copy of `gt`, or `gt` itself with probability `clean_prob`.
/// Rotation noise is drawn independently per joint and applied on the left.
pub fn sample_query<R: Rng + ?Sized>(gt: &HumanState, spec: &PerturbationSpec, rng: &mut R) -> Result<HumanState> {
    if rng.random::<f64>() < spec.clean_prob {
        return Ok(gt.clone());
    }
    let mut q = gt.clone();
    if spec.global_deg > 0.0 || spec.joint_deg > 0.0 {
        for slot in 0..NUM_STATE_JOINTS {
            let sigma = if slot == 0 { spec.global_deg } else { spec.joint_deg };
            if sigma == 0.0 {
                continue;
            }
            let r = rot6d_to_matrix(gt.rotation(slot))?;
            *q.rotation_mut(slot) = matrix_to_rot6d(&(random_rotation(rng, sigma.to_radians()) * r));
        }
    }
    if spec.translation_m > 0.0 {
        for t in &mut q.translation {
            *t += normal(rng) * spec.translation_m;
        }
    }
    if spec.shape > 0.0 {
        for b in &mut q.shape {
            *b += normal(rng) * spec.shape;
        }
    }
    Ok(q)
}

/// Learning-rate schedule and curriculum constants.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainSchedule {
    pub total: usize,
    pub warmup: usize,
    pub peak_lr: f64,
    pub floor_lr: f64,
    /// First iteration supervised on the full rollout.
    pub rollout_switch: usize,
    pub steps: usize,
    pub scale_range: (f64, f64),
    pub anchor_dropout: f64,
    pub batch: usize,
}

pub const REFERENCE_TOTAL: usize = 150_000;

impl Default for TrainSchedule {
    fn default() -> Self {
        Self {
            total: REFERENCE_TOTAL,
            warmup: 2_000,
            peak_lr: 1e-4,
            floor_lr: 2e-7,
            rollout_switch: 10_000,
            steps: 3,
            scale_range: (0.85, 1.15),
            anchor_dropout: 0.35,
            batch: 16,
        }
    }
}

impl TrainSchedule {
    /// Reference schedule compressed to `total` iterations: warmup and the
    /// rollout switch shrink proportionally (at least 1).
    pub fn compressed(total: usize) -> Self {
        let base = Self::default();
        let scale = |k: usize| ((k as f64 * total as f64 / REFERENCE_TOTAL as f64).round() as usize).max(1);
        Self {
            total,
            warmup: scale(base.warmup).min(total.saturating_sub(1)),
            rollout_switch: scale(base.rollout_switch),
            ..base
        }
    }

    /// Linear warmup from 0, then cosine decay reaching `floor_lr` at the
    /// final iteration.
    pub fn lr(&self, k: usize) -> f64 {
        if k < self.warmup {
            return self.peak_lr * k as f64 / self.warmup as f64;
        }
        let last = self.total.saturating_sub(1);
        if last <= self.warmup || k == self.warmup {
            return self.peak_lr;
        }
        let progress = ((k - self.warmup) as f64 / (last - self.warmup) as f64).min(1.0);
        self.floor_lr + (self.peak_lr - self.floor_lr) * 0.5 * (1.0 + libm::cos(std::f64::consts::PI * progress))
    }

    /// Number of rollout steps that receive supervision at iteration `k`.
    pub fn rollout_supervised_steps(&self, k: usize) -> usize {
        if k < self.rollout_switch {
            1
        } else {
            self.steps
        }
    }
}
