use nalgebra::{Matrix3, Vector3};

use super::rotation::{orthonormalize_rot6d, rot6d_to_matrix, Rot6, IDENTITY_6D};
use crate::error::Result;

pub const NUM_BODY_JOINTS: usize = 21;
pub const NUM_HAND_JOINTS: usize = 15;
pub const NUM_SHAPE: usize = 10;
/// Rotation slots carried by a state: global + body + both hands.
pub const NUM_STATE_JOINTS: usize = 1 + NUM_BODY_JOINTS + 2 * NUM_HAND_JOINTS;
pub const LEFT_HAND_SLOT: usize = 1 + NUM_BODY_JOINTS;
pub const RIGHT_HAND_SLOT: usize = LEFT_HAND_SLOT + NUM_HAND_JOINTS;

/// Per-human parameters: pose as 6D rotations, translation in meters and
/// shape coefficients.
#[derive(Clone, Debug, PartialEq)]
pub struct HumanState {
    pub global_orient: Rot6,
    pub body_pose: [Rot6; NUM_BODY_JOINTS],
    pub left_hand_pose: [Rot6; NUM_HAND_JOINTS],
    pub right_hand_pose: [Rot6; NUM_HAND_JOINTS],
    pub translation: [f64; 3],
    pub shape: [f64; NUM_SHAPE],
}

impl Default for HumanState {
    fn default() -> Self {
        Self::identity()
    }
}

impl HumanState {
    /// Rest pose, zero translation, mean shape.
    pub fn identity() -> Self {
        Self {
            global_orient: IDENTITY_6D,
            body_pose: [IDENTITY_6D; NUM_BODY_JOINTS],
            left_hand_pose: [IDENTITY_6D; NUM_HAND_JOINTS],
            right_hand_pose: [IDENTITY_6D; NUM_HAND_JOINTS],
            translation: [0.0; 3],
            shape: [0.0; NUM_SHAPE],
        }
    }

    /// Rotation at a state slot: 0 = global, 1..=21 body, then left and
    /// right hand joints.
    pub fn rotation(&self, slot: usize) -> &Rot6 {
        match slot {
            0 => &self.global_orient,
            s if s < LEFT_HAND_SLOT => &self.body_pose[s - 1],
            s if s < RIGHT_HAND_SLOT => &self.left_hand_pose[s - LEFT_HAND_SLOT],
            s => &self.right_hand_pose[s - RIGHT_HAND_SLOT],
        }
    }

    pub fn rotation_mut(&mut self, slot: usize) -> &mut Rot6 {
        match slot {
            0 => &mut self.global_orient,
            s if s < LEFT_HAND_SLOT => &mut self.body_pose[s - 1],
            s if s < RIGHT_HAND_SLOT => &mut self.left_hand_pose[s - LEFT_HAND_SLOT],
            s => &mut self.right_hand_pose[s - RIGHT_HAND_SLOT],
        }
    }

    pub fn translation_vec(&self) -> Vector3<f64> {
        Vector3::from(self.translation)
    }

    pub fn global_rotation(&self) -> Result<Matrix3<f64>> {
        rot6d_to_matrix(&self.global_orient)
    }

    /// Decodes every rotation block; fails on the first degenerate one.
    pub fn rotation_matrices(&self) -> Result<Vec<Matrix3<f64>>> {
        (0..NUM_STATE_JOINTS)
            .map(|s| rot6d_to_matrix(self.rotation(s)))
            .collect()
    }

    /// Replaces every 6D block with its Gram–Schmidt canonical form.
    pub fn orthonormalized(&self) -> Result<Self> {
        let mut out = self.clone();
        for s in 0..NUM_STATE_JOINTS {
            *out.rotation_mut(s) = orthonormalize_rot6d(self.rotation(s))?;
        }
        Ok(out)
    }

    pub fn is_finite(&self) -> bool {
        (0..NUM_STATE_JOINTS).all(|s| self.rotation(s).iter().all(|v| v.is_finite()))
            && self.translation.iter().all(|v| v.is_finite())
            && self.shape.iter().all(|v| v.is_finite())
    }
}
