//! Geometric probes and the 24 HSI tokens built from them.

pub mod anchors;
mod tokens;

use nalgebra::{Matrix3, Vector3};
use serde::Serialize;

use crate::body_model::{
    BodyModel, HumanState, PosedMesh, LEFT_HAND_SLOT, NUM_BODY_JOINTS, RIGHT_HAND_SLOT,
};
use crate::error::{GraftError, Result};
use crate::network::config::HAND_PROBES;
use crate::scene::NearestNeighbor;
pub use tokens::{fourier_encode, tokenize, HsiTokenSet, FULL_BODY_TOKEN, LEFT_HAND_TOKEN, RIGHT_HAND_TOKEN};

/// One nearest-neighbor query at a body-anchored point.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ProbeRecord {
    pub anchor: [f64; 3],
    pub nearest: [f64; 3],
    /// `nearest - anchor`.
    pub offset: [f64; 3],
    pub normal: [f64; 3],
    /// Anchor in the root-joint frame.
    pub body_relative: [f64; 3],
    pub distance: f64,
    pub point_id: usize,
}

/// Root-joint frame of a posed body.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BodyFrame {
    pub root: Vector3<f64>,
    pub rot_inv: Matrix3<f64>,
}

impl BodyFrame {
    pub fn new(model: &BodyModel, mesh: &PosedMesh, state: &HumanState) -> Result<Self> {
        Ok(Self {
            root: *model.slot_joint(mesh, 0),
            rot_inv: state.global_rotation()?.transpose(),
        })
    }

    pub fn to_body(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rot_inv * (p - self.root)
    }
}

pub fn probe(index: &dyn NearestNeighbor, frame: &BodyFrame, anchor: &Vector3<f64>) -> Result<ProbeRecord> {
    let n = index.nearest(anchor)?;
    let offset = n.point - anchor;
    Ok(ProbeRecord {
        anchor: (*anchor).into(),
        nearest: n.point.into(),
        offset: offset.into(),
        normal: n.normal.into(),
        body_relative: frame.to_body(anchor).into(),
        distance: n.distance,
        point_id: n.id,
    })
}

/// Probe anchors grouped by token.
#[derive(Clone, Debug, PartialEq)]
pub struct TokenAnchors {
    /// One posed joint per body token.
    pub body: Vec<Vector3<f64>>,
    /// Fingertip joints of the left and right hand.
    pub hands: [Vec<Vector3<f64>>; 2],
    /// Posed surface-probe vertices.
    pub surface: Vec<Vector3<f64>>,
}

impl TokenAnchors {
    pub fn new(model: &BodyModel, mesh: &PosedMesh) -> Result<Self> {
        let body = (1..=NUM_BODY_JOINTS).map(|s| *model.slot_joint(mesh, s)).collect();
        let hand = |first: usize| -> Result<Vec<Vector3<f64>>> {
            let ids = model.distal_hand_joints(first);
            if ids.len() != HAND_PROBES {
                return Err(GraftError::InvalidModel(format!(
                    "hand starting at slot {first} has {} distal joints, expected {HAND_PROBES}",
                    ids.len()
                )));
            }
            Ok(ids.iter().map(|&j| mesh.joints[j]).collect())
        };
        Ok(Self {
            body,
            hands: [hand(LEFT_HAND_SLOT)?, hand(RIGHT_HAND_SLOT)?],
            surface: model.surface_probe_ids().iter().map(|&v| mesh.vertices[v]).collect(),
        })
    }

    /// Visual anchor of a hand token: the mean of its fingertips.
    pub fn hand_center(&self, side: usize) -> Vector3<f64> {
        let h = &self.hands[side];
        h.iter().sum::<Vector3<f64>>() / h.len() as f64
    }
}

/// Probe records grouped by token: 21 body, 2 x 5 hand, 27 surface.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ProbeSet {
    pub body: Vec<ProbeRecord>,
    pub hands: [Vec<ProbeRecord>; 2],
    pub surface: Vec<ProbeRecord>,
}

impl ProbeSet {
    pub fn collect(index: &dyn NearestNeighbor, frame: &BodyFrame, anchors: &TokenAnchors) -> Result<Self> {
        let run = |pts: &[Vector3<f64>]| pts.iter().map(|p| probe(index, frame, p)).collect::<Result<Vec<_>>>();
        Ok(Self {
            body: run(&anchors.body)?,
            hands: [run(&anchors.hands[0])?, run(&anchors.hands[1])?],
            surface: run(&anchors.surface)?,
        })
    }

    pub fn iter(&self) -> impl Iterator<Item = &ProbeRecord> {
        self.body
            .iter()
            .chain(self.hands[0].iter())
            .chain(self.hands[1].iter())
            .chain(self.surface.iter())
    }
}
