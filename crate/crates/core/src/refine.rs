//! Iterative refinement: probe, tokenize, attend, decode, update.

use std::time::Instant;

use rayon::prelude::*;

use crate::body_model::{absorb_scale, BodyModel, HumanState, PosedMesh};
use crate::error::{GraftError, Result};
use crate::network::{apply_gradient, decode, transformer_forward, GraftWeights, InteractionGradient};
use crate::probes::anchors::{sample_anchor_features, AnchorContext, VisualFeatureGrids};
use crate::probes::{tokenize, BodyFrame, HsiTokenSet, ProbeSet, TokenAnchors};
use crate::scene::{CameraIntrinsics, NearestNeighbor, ScenePointCloud, SpatialIndex};

/// Half-angle of the cone around the head ray searched by [`metric_align`].
pub const HEAD_RAY_TOLERANCE_DEG: f64 = 2.0;

#[derive(Clone, Debug, PartialEq)]
pub struct RefinementConfig {
    pub iterations: usize,
    /// Skip visual anchors even when feature grids are available.
    pub geometry_only: bool,
    /// Evenly downsample the scene to at most this many points first.
    pub max_points: Option<usize>,
    pub record_trajectory: bool,
}

impl Default for RefinementConfig {
    fn default() -> Self {
        Self {
            iterations: 3,
            geometry_only: false,
            max_points: None,
            record_trajectory: true,
        }
    }
}

/// States visited by one human, starting with the initialization.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Trajectory {
    pub states: Vec<HumanState>,
    /// Mean nearest-scene distance of the contact vertices (m) per state.
    pub mean_probe_dist: Vec<f64>,
    /// Scale applied by each step; 1.0 for the initial entry.
    pub scales: Vec<f64>,
    /// Wall-clock time of each step (ms); 0 for the initial entry.
    pub wall_ms: Vec<f64>,
}

/// Builds the token set of one human against a scene.
pub fn build_tokens(
    model: &BodyModel,
    index: &dyn NearestNeighbor,
    state: &HumanState,
    mesh: &PosedMesh,
    w: &GraftWeights,
) -> Result<HsiTokenSet> {
    let anchors = TokenAnchors::new(model, mesh)?;
    let frame = BodyFrame::new(model, mesh, state)?;
    let probes = ProbeSet::collect(index, &frame, &anchors)?;
    let tokens = tokenize(state, &probes, w)?;
    Ok(HsiTokenSet {
        tokens,
        width: w.config().width,
        probes,
        anchors,
    })
}

/// Output of a single refinement step.
#[derive(Clone, Debug)]
pub struct StepOutput {
    pub state: HumanState,
    pub gradient: InteractionGradient,
    pub tokens: HsiTokenSet,
    pub context: Option<AnchorContext>,
}

/// One pass of probe -> tokenize -> transformer -> decode -> update.
pub fn refine_step(
    model: &BodyModel,
    index: &dyn NearestNeighbor,
    grids: Option<&VisualFeatureGrids>,
    w: &GraftWeights,
    state: &HumanState,
) -> Result<StepOutput> {
    let mesh = model.forward(state)?;
    let tokens = build_tokens(model, index, state, &mesh, w)?;
    let context = grids
        .map(|g| sample_anchor_features(g, &tokens.anchors, w))
        .transpose()?;
    let refined = transformer_forward(&tokens.tokens, context.as_ref(), w)?;
    let gradient = decode(&refined, w)?;
    if !gradient.is_finite() {
        return Err(GraftError::InvalidArgument("network produced a non-finite update".into()));
    }
    let state = apply_gradient(state, &gradient, model)?;
    Ok(StepOutput {
        state,
        gradient,
        tokens,
        context,
    })
}

/// Mean nearest-scene distance over the model's contact vertices.
pub fn mean_contact_distance(model: &BodyModel, mesh: &PosedMesh, index: &dyn NearestNeighbor) -> Result<f64> {
    let ids = model.contact_vertex_ids();
    let mut sum = 0.0;
    for &v in ids {
        sum += index.nearest(&mesh.vertices[v])?.distance;
    }
    Ok(sum / ids.len().max(1) as f64)
}

fn refine_one(
    model: &BodyModel,
    index: &SpatialIndex,
    grids: Option<&VisualFeatureGrids>,
    w: &GraftWeights,
    config: &RefinementConfig,
    init: &HumanState,
) -> Result<(HumanState, Trajectory)> {
    let mut traj = Trajectory::default();
    let record = |traj: &mut Trajectory, s: &HumanState, scale: f64, ms: f64| -> Result<()> {
        let mesh = model.forward(s)?;
        traj.mean_probe_dist.push(mean_contact_distance(model, &mesh, index)?);
        traj.states.push(s.clone());
        traj.scales.push(scale);
        traj.wall_ms.push(ms);
        Ok(())
    };
    if config.record_trajectory {
        record(&mut traj, init, 1.0, 0.0)?;
    }
    let mut state = init.clone();
    for _ in 0..config.iterations {
        let t0 = Instant::now();
        let out = refine_step(model, index, grids, w, &state)?;
        let ms = t0.elapsed().as_secs_f64() * 1e3;
        state = out.state;
        if config.record_trajectory {
            record(&mut traj, &state, out.gradient.scale, ms)?;
        }
    }
    Ok((state, traj))
}

/// Refines every human independently against a shared scene and network.
pub fn refine(
    states: &[HumanState],
    model: &BodyModel,
    scene: &SpatialIndex,
    grids: Option<&VisualFeatureGrids>,
    w: &GraftWeights,
    config: &RefinementConfig,
) -> Result<Vec<(HumanState, Trajectory)>> {
    let reduced;
    let index = match config.max_points {
        Some(m) if m < scene.cloud().len() => {
            reduced = SpatialIndex::new(scene.cloud().downsample(m)?);
            &reduced
        }
        _ => scene,
    };
    let grids = if config.geometry_only { None } else { grids };
    states
        .par_iter()
        .map(|s| refine_one(model, index, grids, w, config, s))
        .collect()
}

/// Depth-ratio alignment: the scene point seen along the head joint's
/// viewing ray fixes the metric scale of the human.
///
/// Returns the rescaled state and the applied scale.
pub fn metric_align(
    state: &HumanState,
    model: &BodyModel,
    scene: &ScenePointCloud,
    intrinsics: &CameraIntrinsics,
) -> Result<(HumanState, f64)> {
    let mesh = model.forward(state)?;
    let head = mesh.joints[model.head_joint()];
    let (u, v) = intrinsics.project(&head).pixel().ok_or(GraftError::HeadNotVisible)?;
    if !intrinsics.contains(u, v) {
        return Err(GraftError::HeadNotVisible);
    }
    let ray = intrinsics.ray(u, v);
    let min_cos = libm::cos(HEAD_RAY_TOLERANCE_DEG.to_radians());
    // Front-most point inside the cone: what a pointmap pixel would see.
    let hit = scene
        .points()
        .iter()
        .filter(|p| p.z > 0.0 && ray.dot(p) >= min_cos * p.norm())
        .min_by(|a, b| a.z.total_cmp(&b.z))
        .ok_or(GraftError::NoScenePointOnRay)?;
    let s = hit.z / head.z;
    if s == 1.0 {
        return Ok((state.clone(), s));
    }
    Ok((absorb_scale(state, s, model)?, s))
}

