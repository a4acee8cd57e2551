//! Parametric articulated body: shape blendshapes, linear blend skinning,
//! and the closed-form absorption of a uniform scale into shape space.

pub mod areas;
pub mod rotation;
mod state;
pub mod toy;

use nalgebra::{DMatrix, DVector, Matrix3, SymmetricEigen, Vector3};

use crate::error::{GraftError, Result};
pub use rotation::{
    axis_angle_to_matrix, axis_angle_to_rot6d, matrix_to_axis_angle, matrix_to_rot6d,
    orthonormalize_rot6d, rot6d_to_matrix, Rot6, IDENTITY_6D,
};
pub use state::{
    HumanState, LEFT_HAND_SLOT, NUM_BODY_JOINTS, NUM_HAND_JOINTS, NUM_SHAPE, NUM_STATE_JOINTS,
    RIGHT_HAND_SLOT,
};

pub const NUM_SURFACE_PROBES: usize = 27;
/// State slot of the head joint in the default layout.
pub const DEFAULT_HEAD_SLOT: usize = 15;

const SKIN_SUM_TOL: f64 = 1e-6;
const MAX_GRAM_CONDITION: f64 = 1e12;

/// Raw, dense arrays describing a body model, as stored in a model file.
#[derive(Clone, Debug, PartialEq)]
pub struct BodyModelParts {
    pub template_vertices: Vec<[f64; 3]>,
    /// `NUM_SHAPE` blendshapes, each with one offset per vertex.
    pub shape_dirs: Vec<Vec<[f64; 3]>>,
    /// Row-major `J x V`.
    pub joint_regressor: Vec<f64>,
    pub parents: Vec<Option<usize>>,
    /// Row-major `V x J`.
    pub skin_weights: Vec<f64>,
    pub faces: Vec<[usize; 3]>,
    pub contact_vertex_ids: Vec<usize>,
    pub surface_probe_ids: Vec<usize>,
    /// Model joint driven by each state slot; `None` means identity mapping.
    pub state_joint_ids: Option<Vec<usize>>,
    pub head_joint: Option<usize>,
    /// Precomputed areas; computed from the template when absent.
    pub vertex_areas: Option<Vec<f64>>,
}

/// Immutable body model with derived quantities cached at construction.
#[derive(Clone, Debug)]
pub struct BodyModel {
    parts: BodyModelParts,
    template: Vec<Vector3<f64>>,
    shape_dirs: Vec<Vec<Vector3<f64>>>,
    regressor: Vec<Vec<(usize, f64)>>,
    skinning: Vec<Vec<(usize, f64)>>,
    /// Joints sorted so that every parent precedes its children.
    order: Vec<usize>,
    state_joint_ids: [usize; NUM_STATE_JOINTS],
    slot_of_joint: Vec<Option<usize>>,
    head_joint: usize,
    vertex_areas: Vec<f64>,
    template_offset: [f64; NUM_SHAPE],
}

/// Posed vertices and joints in the camera frame (meters).
#[derive(Clone, Debug, PartialEq)]
pub struct PosedMesh {
    pub vertices: Vec<Vector3<f64>>,
    pub joints: Vec<Vector3<f64>>,
}

impl BodyModel {
    pub fn new(parts: BodyModelParts) -> Result<Self> {
        let nv = parts.template_vertices.len();
        let nj = parts.parents.len();
        if nv == 0 || nj == 0 {
            return Err(GraftError::InvalidModel("model has no vertices or joints".into()));
        }
        if parts.shape_dirs.len() != NUM_SHAPE {
            return Err(GraftError::InvalidModel(format!(
                "expected {NUM_SHAPE} shape directions, got {}",
                parts.shape_dirs.len()
            )));
        }
        if parts.shape_dirs.iter().any(|d| d.len() != nv) {
            return Err(GraftError::InvalidModel("shape_dirs vertex count mismatch".into()));
        }
        if parts.joint_regressor.len() != nj * nv {
            return Err(GraftError::InvalidModel("joint_regressor must be J x V".into()));
        }
        if parts.skin_weights.len() != nv * nj {
            return Err(GraftError::InvalidModel("skin_weights must be V x J".into()));
        }

        let order = topological_order(&parts.parents)?;

        let mut skinning = Vec::with_capacity(nv);
        for v in 0..nv {
            let row = &parts.skin_weights[v * nj..(v + 1) * nj];
            if row.iter().any(|w| !(*w >= 0.0)) {
                return Err(GraftError::InvalidModel(format!(
                    "negative or NaN skin weight at vertex {v}"
                )));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > SKIN_SUM_TOL {
                return Err(GraftError::InvalidModel(format!(
                    "skin weights of vertex {v} sum to {sum}"
                )));
            }
            skinning.push(
                row.iter()
                    .enumerate()
                    .filter(|(_, w)| **w != 0.0)
                    .map(|(j, w)| (j, *w))
                    .collect(),
            );
        }
        let regressor = (0..nj)
            .map(|j| {
                parts.joint_regressor[j * nv..(j + 1) * nv]
                    .iter()
                    .enumerate()
                    .filter(|(_, w)| **w != 0.0)
                    .map(|(v, w)| (v, *w))
                    .collect()
            })
            .collect();

        check_ids("contact_vertex_ids", &parts.contact_vertex_ids, nv)?;
        check_ids("surface_probe_ids", &parts.surface_probe_ids, nv)?;
        if parts.surface_probe_ids.len() != NUM_SURFACE_PROBES {
            return Err(GraftError::InvalidModel(format!(
                "expected {NUM_SURFACE_PROBES} surface probes, got {}",
                parts.surface_probe_ids.len()
            )));
        }
        for f in &parts.faces {
            if f.iter().any(|&i| i >= nv) {
                return Err(GraftError::InvalidModel(format!("face {f:?} out of range")));
            }
        }

        let state_joint_ids: [usize; NUM_STATE_JOINTS] = match &parts.state_joint_ids {
            Some(ids) => {
                if ids.len() != NUM_STATE_JOINTS {
                    return Err(GraftError::DimensionMismatch(format!(
                        "state_joint_ids has {} entries, state layout needs {NUM_STATE_JOINTS}",
                        ids.len()
                    )));
                }
                check_ids("state_joint_ids", ids, nj)?;
                std::array::from_fn(|i| ids[i])
            }
            None => {
                if nj != NUM_STATE_JOINTS {
                    return Err(GraftError::DimensionMismatch(format!(
                        "model has {nj} joints but no state_joint_ids mapping"
                    )));
                }
                std::array::from_fn(|i| i)
            }
        };
        if state_joint_ids[0] != order[0] {
            return Err(GraftError::InvalidModel("state slot 0 must drive the root joint".into()));
        }
        let mut slot_of_joint = vec![None; nj];
        for (slot, &j) in state_joint_ids.iter().enumerate() {
            slot_of_joint[j] = Some(slot);
        }
        let head_joint = parts.head_joint.unwrap_or(state_joint_ids[DEFAULT_HEAD_SLOT]);
        if head_joint >= nj {
            return Err(GraftError::InvalidModel(format!("head joint {head_joint} out of range")));
        }

        let template: Vec<Vector3<f64>> = parts.template_vertices.iter().map(|v| Vector3::from(*v)).collect();
        let shape_dirs: Vec<Vec<Vector3<f64>>> = parts
            .shape_dirs
            .iter()
            .map(|d| d.iter().map(|v| Vector3::from(*v)).collect())
            .collect();

        let vertex_areas = match &parts.vertex_areas {
            Some(a) => {
                if a.len() != nv || a.iter().any(|x| !(*x >= 0.0)) {
                    return Err(GraftError::InvalidModel("vertex_areas must be V nonnegative values".into()));
                }
                a.clone()
            }
            None => areas::mixed_voronoi_areas(&template, &parts.faces),
        };

        let template_offset = compute_template_offset(&template, &shape_dirs)?;

        Ok(Self {
            parts,
            template,
            shape_dirs,
            regressor,
            skinning,
            order,
            state_joint_ids,
            slot_of_joint,
            head_joint,
            vertex_areas,
            template_offset,
        })
    }

    pub fn parts(&self) -> &BodyModelParts {
        &self.parts
    }
    pub fn num_vertices(&self) -> usize {
        self.template.len()
    }
    pub fn num_joints(&self) -> usize {
        self.parts.parents.len()
    }
    pub fn template_vertices(&self) -> &[Vector3<f64>] {
        &self.template
    }
    pub fn shape_dirs(&self) -> &[Vec<Vector3<f64>>] {
        &self.shape_dirs
    }
    pub fn parents(&self) -> &[Option<usize>] {
        &self.parts.parents
    }
    pub fn faces(&self) -> &[[usize; 3]] {
        &self.parts.faces
    }
    pub fn contact_vertex_ids(&self) -> &[usize] {
        &self.parts.contact_vertex_ids
    }
    pub fn surface_probe_ids(&self) -> &[usize] {
        &self.parts.surface_probe_ids
    }
    pub fn vertex_areas(&self) -> &[f64] {
        &self.vertex_areas
    }
    /// Least-squares coordinates `c` of the template in shape space.
    pub fn template_offset(&self) -> &[f64; NUM_SHAPE] {
        &self.template_offset
    }
    pub fn state_joint_ids(&self) -> &[usize; NUM_STATE_JOINTS] {
        &self.state_joint_ids
    }
    /// Model joint driven by a state slot.
    pub fn joint_of_slot(&self, slot: usize) -> usize {
        self.state_joint_ids[slot]
    }
    pub fn head_joint(&self) -> usize {
        self.head_joint
    }
    pub fn skinning(&self) -> &[Vec<(usize, f64)>] {
        &self.skinning
    }
    pub fn regressor_rows(&self) -> &[Vec<(usize, f64)>] {
        &self.regressor
    }

    /// Model joints of one hand (15 slots starting at `first_slot`) that have
    /// no child inside that hand: the fingertip-most joint of each finger.
    pub fn distal_hand_joints(&self, first_slot: usize) -> Vec<usize> {
        let hand: Vec<usize> = (first_slot..first_slot + NUM_HAND_JOINTS)
            .map(|s| self.state_joint_ids[s])
            .collect();
        hand.iter()
            .copied()
            .filter(|&j| !hand.iter().any(|&c| self.parts.parents[c] == Some(j)))
            .collect()
    }

    /// `T + sum_k beta_k S_k`.
    pub fn shaped_vertices(&self, shape: &[f64; NUM_SHAPE]) -> Vec<Vector3<f64>> {
        let mut out = self.template.clone();
        for (beta, dir) in shape.iter().zip(&self.shape_dirs) {
            if *beta == 0.0 {
                continue;
            }
            for (o, d) in out.iter_mut().zip(dir) {
                *o += d * *beta;
            }
        }
        out
    }

    pub fn regress_joints(&self, vertices: &[Vector3<f64>]) -> Vec<Vector3<f64>> {
        self.regressor
            .iter()
            .map(|row| row.iter().fold(Vector3::zeros(), |acc, (v, w)| acc + vertices[*v] * *w))
            .collect()
    }

    fn check_state(&self, state: &HumanState) -> Result<()> {
        if !state.is_finite() {
            return Err(GraftError::DimensionMismatch("state contains non-finite values".into()));
        }
        Ok(())
    }

    /// Shape blendshapes followed by linear blend skinning and translation.
    pub fn forward(&self, state: &HumanState) -> Result<PosedMesh> {
        self.check_state(state)?;
        let shaped = self.shaped_vertices(&state.shape);
        let rest_joints = self.regress_joints(&shaped);
        let nj = self.num_joints();

        let mut local = vec![Matrix3::identity(); nj];
        for (slot, &j) in self.state_joint_ids.iter().enumerate() {
            local[j] = rot6d_to_matrix(state.rotation(slot))?;
        }

        // Everything is kept relative to the rest pose: `rot_delta = R_j - I`
        // and `joint_shift = t_j - J_j`, so identity rotations reproduce the
        // template bit-for-bit.
        let mut world_rot = vec![Matrix3::identity(); nj];
        let mut rot_delta = vec![Matrix3::zeros(); nj];
        let mut joint_shift = vec![Vector3::zeros(); nj];
        for &j in &self.order {
            match self.parts.parents[j] {
                None => {
                    world_rot[j] = local[j];
                }
                Some(p) => {
                    world_rot[j] = world_rot[p] * local[j];
                    joint_shift[j] =
                        rot_delta[p] * (rest_joints[j] - rest_joints[p]) + joint_shift[p];
                }
            }
            rot_delta[j] = world_rot[j] - Matrix3::identity();
        }

        let tau = state.translation_vec();
        let vertices = shaped
            .iter()
            .zip(&self.skinning)
            .map(|(v, weights)| {
                let moved = weights.iter().fold(Vector3::zeros(), |acc, (j, w)| {
                    acc + (rot_delta[*j] * (v - rest_joints[*j]) + joint_shift[*j]) * *w
                });
                v + moved + tau
            })
            .collect();
        let joints = rest_joints
            .iter()
            .zip(&joint_shift)
            .map(|(r, d)| r + d + tau)
            .collect();
        Ok(PosedMesh { vertices, joints })
    }

    /// Joint position for a state slot in a posed mesh.
    pub fn slot_joint<'a>(&self, mesh: &'a PosedMesh, slot: usize) -> &'a Vector3<f64> {
        &mesh.joints[self.state_joint_ids[slot]]
    }

    /// State slot driving a model joint, if any (unmapped joints stay at identity).
    pub fn slot_of_joint(&self, joint: usize) -> Option<usize> {
        self.slot_of_joint[joint]
    }
}

/// Folds a uniform scale into shape and translation:
/// `beta_s = s (beta + c) - c`, `tau_s = s tau`, rotations untouched.
pub fn absorb_scale(state: &HumanState, s: f64, model: &BodyModel) -> Result<HumanState> {
    if !(s > 0.0) || !s.is_finite() {
        return Err(GraftError::NonPositiveScale(s));
    }
    let c = model.template_offset();
    let mut out = state.clone();
    for (k, b) in out.shape.iter_mut().enumerate() {
        // s(b + c) - c, written so that s = 1 leaves b untouched
        *b += (s - 1.0) * (*b + c[k]);
    }
    for t in &mut out.translation {
        *t *= s;
    }
    Ok(out)
}

/// Least-squares projection of the template into shape space,
/// `c = (S S^T)^{-1} S T`.
pub fn compute_template_offset(
    template: &[Vector3<f64>],
    shape_dirs: &[Vec<Vector3<f64>>],
) -> Result<[f64; NUM_SHAPE]> {
    let k = shape_dirs.len();
    if k != NUM_SHAPE {
        return Err(GraftError::DimensionMismatch(format!(
            "expected {NUM_SHAPE} shape directions, got {k}"
        )));
    }
    let dot = |a: &[Vector3<f64>], b: &[Vector3<f64>]| -> f64 {
        a.iter().zip(b).map(|(x, y)| x.dot(y)).sum()
    };
    let gram = DMatrix::from_fn(k, k, |i, j| dot(&shape_dirs[i], &shape_dirs[j]));
    let rhs = DVector::from_fn(k, |i, _| dot(&shape_dirs[i], template));

    let eig = SymmetricEigen::new(gram.clone());
    let max = eig.eigenvalues.max();
    let min = eig.eigenvalues.min();
    let condition = if min > 0.0 { max / min } else { f64::INFINITY };
    if !(condition < MAX_GRAM_CONDITION) {
        return Err(GraftError::RankDeficientBlendshapes(condition));
    }
    let chol = gram
        .cholesky()
        .ok_or(GraftError::RankDeficientBlendshapes(condition))?;
    let c = chol.solve(&rhs);
    Ok(std::array::from_fn(|i| c[i]))
}

fn check_ids(name: &str, ids: &[usize], bound: usize) -> Result<()> {
    let mut seen = vec![false; bound];
    for &i in ids {
        if i >= bound {
            return Err(GraftError::InvalidModel(format!("{name}: index {i} out of range {bound}")));
        }
        if std::mem::replace(&mut seen[i], true) {
            return Err(GraftError::InvalidModel(format!("{name}: duplicate index {i}")));
        }
    }
    Ok(())
}

/// Parents must form a single tree; returns a parent-before-child order.
fn topological_order(parents: &[Option<usize>]) -> Result<Vec<usize>> {
    let n = parents.len();
    let roots: Vec<usize> = (0..n).filter(|&j| parents[j].is_none()).collect();
    if roots != [0] {
        return Err(GraftError::InvalidModel(format!(
            "joint tree must have exactly one root at joint 0, found {roots:?}"
        )));
    }
    let mut children = vec![Vec::new(); n];
    for (j, p) in parents.iter().enumerate() {
        if let Some(p) = *p {
            if p >= n || p == j {
                return Err(GraftError::InvalidModel(format!("joint {j} has invalid parent {p}")));
            }
            children[p].push(j);
        }
    }
    let mut order = Vec::with_capacity(n);
    let mut stack = vec![0];
    while let Some(j) = stack.pop() {
        order.push(j);
        stack.extend(children[j].iter().rev());
    }
    if order.len() != n {
        return Err(GraftError::InvalidModel("joint hierarchy contains a cycle".into()));
    }
    Ok(order)
}
