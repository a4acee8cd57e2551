//! JSON state documents: one entry per human plus optional intrinsics.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::body_model::{HumanState, Rot6, NUM_BODY_JOINTS, NUM_HAND_JOINTS, NUM_SHAPE};
use crate::error::{GraftError, Result};
use crate::scene::CameraIntrinsics;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HumanRecord {
    pub global_orient6d: Rot6,
    pub body_pose6d: Vec<Rot6>,
    pub left_hand6d: Vec<Rot6>,
    pub right_hand6d: Vec<Rot6>,
    pub translation_m: [f64; 3],
    pub shape: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StateDocument {
    pub schema_version: u32,
    pub humans: Vec<HumanRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intrinsics: Option<CameraIntrinsics>,
}

fn fixed<const N: usize, T: Copy>(v: &[T], field: &str, human: usize) -> Result<[T; N]> {
    v.try_into().map_err(|_| {
        GraftError::StateDocument(format!("human {human}: {field} has {} entries, expected {N}", v.len()))
    })
}

impl From<&HumanState> for HumanRecord {
    fn from(s: &HumanState) -> Self {
        Self {
            global_orient6d: s.global_orient,
            body_pose6d: s.body_pose.to_vec(),
            left_hand6d: s.left_hand_pose.to_vec(),
            right_hand6d: s.right_hand_pose.to_vec(),
            translation_m: s.translation,
            shape: s.shape.to_vec(),
        }
    }
}

impl HumanRecord {
    pub fn to_state(&self, human: usize) -> Result<HumanState> {
        let s = HumanState {
            global_orient: self.global_orient6d,
            body_pose: fixed::<NUM_BODY_JOINTS, _>(&self.body_pose6d, "body_pose6d", human)?,
            left_hand_pose: fixed::<NUM_HAND_JOINTS, _>(&self.left_hand6d, "left_hand6d", human)?,
            right_hand_pose: fixed::<NUM_HAND_JOINTS, _>(&self.right_hand6d, "right_hand6d", human)?,
            translation: self.translation_m,
            shape: fixed::<NUM_SHAPE, _>(&self.shape, "shape", human)?,
        };
        if !s.is_finite() {
            return Err(GraftError::StateDocument(format!("human {human}: non-finite value")));
        }
        Ok(s)
    }
}

impl StateDocument {
    pub fn new(states: &[HumanState], intrinsics: Option<CameraIntrinsics>) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            humans: states.iter().map(HumanRecord::from).collect(),
            intrinsics,
        }
    }

    pub fn states(&self) -> Result<Vec<HumanState>> {
        self.humans.iter().enumerate().map(|(i, h)| h.to_state(i)).collect()
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: Self = serde_json::from_str(text).map_err(|e| GraftError::StateDocument(e.to_string()))?;
        if doc.schema_version != SCHEMA_VERSION {
            return Err(GraftError::StateDocument(format!(
                "unsupported schema_version {}",
                doc.schema_version
            )));
        }
        if let Some(k) = &doc.intrinsics {
            k.validate()?;
        }
        doc.states()?;
        Ok(doc)
    }

    /// Pretty JSON with shortest round-trip float formatting and a trailing
    /// newline.
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("state documents serialize");
        s.push('\n');
        s
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_json(&std::fs::read_to_string(path).map_err(|e| GraftError::io(path, e))?)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()).map_err(|e| GraftError::io(path, e))
    }
}
