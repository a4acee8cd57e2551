//! Procedural scenarios: a sampled room, a toy human in contact with it and
//! a perturbed initialization.
//!
//! Everything lives in the camera frame (x right, y down, z forward), with
//! the floor at `y = FLOOR_Y`.

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::body_model::toy::{skeleton, toy_model_parts, ToyModelOptions};
use crate::body_model::{
    axis_angle_to_matrix, matrix_to_rot6d, BodyModel, BodyModelParts, HumanState, PosedMesh,
};
use crate::error::{GraftError, Result};
use crate::metrics::DEFAULT_CONTACT_TAU;
use crate::network::config::{NUM_LEVELS, NUM_STREAMS};
use crate::probes::anchors::{FeatureGrid, VisualFeatureGrids};
use crate::scene::{CameraIntrinsics, ScenePointCloud};
use crate::training::{sample_query, PerturbationSpec};

/// Camera height above the floor.
pub const FLOOR_Y: f64 = 1.3;
pub const BACK_WALL_Z: f64 = 5.0;
pub const SIDE_WALL_X: f64 = -2.0;
pub const SAMPLE_SPACING: f64 = 0.05;
/// Gap left between the lowest body point and its support.
pub const CONTACT_GAP: f64 = 0.002;
pub const DEFAULT_DIFFICULTY: f64 = 2.0;
const SCENE_SEED: u64 = 0x5ce4e;
const STANDING_Z: f64 = 3.2;
const HUMAN_SPACING_X: f64 = 0.8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, clap::ValueEnum)]
pub enum ScenarioKind {
    /// Floor plane only, humans standing.
    FloorOnly,
    /// Floor, two walls and a box, humans standing.
    Standing,
    /// Floor, two walls, humans seated on a box.
    Seated,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScenarioConfig {
    pub kind: ScenarioKind,
    /// Seeds the initialization noise only; scene and GT do not depend on it.
    pub seed: u64,
    /// Multiplier on the default perturbation magnitudes.
    pub difficulty: f64,
    pub humans: usize,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            kind: ScenarioKind::Standing,
            seed: 0,
            difficulty: DEFAULT_DIFFICULTY,
            humans: 1,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SyntheticScenario {
    pub config: ScenarioConfig,
    pub model_parts: BodyModelParts,
    pub model: BodyModel,
    pub cloud: ScenePointCloud,
    pub intrinsics: CameraIntrinsics,
    pub gt: Vec<HumanState>,
    pub init: Vec<HumanState>,
}

pub fn default_intrinsics() -> CameraIntrinsics {
    CameraIntrinsics::new(500.0, 500.0, 320.0, 240.0, 640, 480).expect("valid intrinsics")
}

/// Init noise used by the scenario: the default training noise at
/// `difficulty`, never returning the clean state.
pub fn init_spec(difficulty: f64) -> PerturbationSpec {
    PerturbationSpec {
        clean_prob: 0.0,
        ..PerturbationSpec::default().scaled(difficulty)
    }
}

fn rot(axis: Vector3<f64>, deg: f64) -> Matrix3<f64> {
    axis_angle_to_matrix(&(axis * deg.to_radians()))
}

/// Maps the canonical y-up, z-forward body to face the camera, then turns
/// it by `yaw_deg` about its own vertical.
fn facing_camera(yaw_deg: f64) -> Matrix3<f64> {
    rot(Vector3::x(), 180.0) * rot(Vector3::y(), yaw_deg)
}

fn set_rot(state: &mut HumanState, slot: usize, m: Matrix3<f64>) {
    *state.rotation_mut(slot) = matrix_to_rot6d(&m);
}

fn lowest_y(mesh: &PosedMesh) -> f64 {
    mesh.vertices.iter().map(|v| v.y).fold(f64::NEG_INFINITY, f64::max)
}

fn with_translation(state: &HumanState, t: [f64; 3]) -> HumanState {
    HumanState {
        translation: t,
        ..state.clone()
    }
}

/// Drops `state` vertically so its lowest vertex sits `CONTACT_GAP` above
/// the floor.
fn rest_on_floor(model: &BodyModel, state: &HumanState, x: f64, z: f64) -> Result<HumanState> {
    let probe = with_translation(state, [x, 0.0, z]);
    let low = lowest_y(&model.forward(&probe)?);
    Ok(with_translation(state, [x, FLOOR_Y - CONTACT_GAP - low, z]))
}

/// Lowers the arms and levels both feet so their soles rest flat.
fn relaxed_limbs(state: &mut HumanState) {
    // State slots of the shoulders (joints 16 and 17) and ankles (7 and 8).
    set_rot(state, 16, rot(Vector3::z(), -60.0));
    set_rot(state, 17, rot(Vector3::z(), 60.0));
    let joints = skeleton(false);
    for (ankle, foot) in [(7, 10), (8, 11)] {
        let d = joints[foot].position - joints[ankle].position;
        set_rot(state, ankle, rot(Vector3::x(), libm::atan2(d.y, d.z).to_degrees()));
    }
}

/// Upright pose with lowered arms, feet on the floor at `(x, z)`.
pub fn standing_state(model: &BodyModel, x: f64, z: f64, yaw_deg: f64) -> Result<HumanState> {
    let mut s = HumanState::identity();
    set_rot(&mut s, 0, facing_camera(yaw_deg));
    relaxed_limbs(&mut s);
    rest_on_floor(model, &s, x, z)
}

/// Hips and knees flexed by 90 degrees, feet on the floor at `(x, z)`.
pub fn seated_state(model: &BodyModel, x: f64, z: f64, yaw_deg: f64) -> Result<HumanState> {
    let mut s = HumanState::identity();
    set_rot(&mut s, 0, facing_camera(yaw_deg));
    relaxed_limbs(&mut s);
    for hip in [1, 2] {
        set_rot(&mut s, hip, rot(Vector3::x(), -90.0));
    }
    for knee in [4, 5] {
        set_rot(&mut s, knee, rot(Vector3::x(), 90.0));
    }
    rest_on_floor(model, &s, x, z)
}

/// Axis-aligned box resting on the floor.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FloorBox {
    pub x: (f64, f64),
    pub z: (f64, f64),
    /// Camera-frame y of the top face.
    pub top_y: f64,
}

/// A box that supports the seated body from below: its top touches the
/// lowest contact vertex that is not near the floor.
pub fn seat_under(model: &BodyModel, mesh: &PosedMesh) -> Result<FloorBox> {
    let seat: Vec<Vector3<f64>> = model
        .contact_vertex_ids()
        .iter()
        .map(|&v| mesh.vertices[v])
        .filter(|p| p.y < FLOOR_Y - 0.15)
        .collect();
    let top = seat.iter().map(|p| p.y).fold(f64::NEG_INFINITY, f64::max);
    if !top.is_finite() {
        return Err(GraftError::InvalidArgument("no seat contact vertices".into()));
    }
    let resting: Vec<&Vector3<f64>> = seat.iter().filter(|p| p.y > top - 0.08).collect();
    let bound = |f: fn(&Vector3<f64>) -> f64| {
        resting
            .iter()
            .map(|p| f(p))
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
    };
    let (x, z) = (bound(|p| p.x), bound(|p| p.z));
    Ok(FloorBox {
        x: (x.0 - 0.1, x.1 + 0.1),
        z: (z.0 - 0.1, z.1 + 0.1),
        top_y: top + CONTACT_GAP,
    })
}

struct Sampler {
    rng: ChaCha8Rng,
    points: Vec<Vector3<f64>>,
    normals: Vec<Vector3<f64>>,
}

impl Sampler {
    /// Jittered grid over the rectangle `origin + a*u + b*v`,
    /// `a in [0, la]`, `b in [0, lb]`.
    fn rect(&mut self, origin: Vector3<f64>, u: Vector3<f64>, la: f64, v: Vector3<f64>, lb: f64, n: Vector3<f64>) {
        let (na, nb) = ((la / SAMPLE_SPACING).ceil() as usize, (lb / SAMPLE_SPACING).ceil() as usize);
        for i in 0..na {
            for j in 0..nb {
                let a = ((i as f64 + self.rng.random_range(0.1..0.9)) * la / na as f64).min(la);
                let b = ((j as f64 + self.rng.random_range(0.1..0.9)) * lb / nb as f64).min(lb);
                self.points.push(origin + u * a + v * b);
                self.normals.push(n);
            }
        }
    }

    fn floor_box(&mut self, b: &FloorBox) {
        let (w, d, h) = (b.x.1 - b.x.0, b.z.1 - b.z.0, FLOOR_Y - b.top_y);
        let (x, y, z) = (Vector3::x(), Vector3::y(), Vector3::z());
        self.rect(Vector3::new(b.x.0, b.top_y, b.z.0), x, w, z, d, -y);
        // Faces visible from a camera in front: front and both sides.
        self.rect(Vector3::new(b.x.0, b.top_y, b.z.0), x, w, y, h, -z);
        self.rect(Vector3::new(b.x.0, b.top_y, b.z.0), z, d, y, h, -x);
        self.rect(Vector3::new(b.x.1, b.top_y, b.z.0), z, d, y, h, x);
    }
}

fn room(kind: ScenarioKind, boxes: &[FloorBox]) -> Result<ScenePointCloud> {
    let mut s = Sampler {
        rng: ChaCha8Rng::seed_from_u64(SCENE_SEED),
        points: Vec::new(),
        normals: Vec::new(),
    };
    let (x, y, z) = (Vector3::x(), Vector3::y(), Vector3::z());
    let height = 2.6;
    let (near_z, half_w) = (1.5, -SIDE_WALL_X);
    s.rect(Vector3::new(-half_w, FLOOR_Y, near_z), x, 2.0 * half_w, z, BACK_WALL_Z - near_z, -y);
    if kind != ScenarioKind::FloorOnly {
        let top = FLOOR_Y - height;
        s.rect(Vector3::new(-half_w, top, BACK_WALL_Z), x, 2.0 * half_w, y, height, -z);
        s.rect(Vector3::new(SIDE_WALL_X, top, near_z), z, BACK_WALL_Z - near_z, y, height, x);
    }
    for b in boxes {
        s.floor_box(b);
    }
    ScenePointCloud::new(s.points, s.normals, Vector3::zeros())
}

fn human_x(i: usize, n: usize) -> f64 {
    (i as f64 - (n as f64 - 1.0) / 2.0) * HUMAN_SPACING_X
}

pub fn synthesize_scenario(config: &ScenarioConfig) -> Result<SyntheticScenario> {
    if config.humans == 0 {
        return Err(GraftError::InvalidArgument("a scenario needs at least one human".into()));
    }
    if !(config.difficulty >= 0.0) {
        return Err(GraftError::InvalidArgument(format!("difficulty must be >= 0, got {}", config.difficulty)));
    }
    let model_parts = toy_model_parts(&ToyModelOptions::default());
    let model = BodyModel::new(model_parts.clone())?;
    let n = config.humans;
    let mut gt = Vec::with_capacity(n);
    let mut boxes = Vec::new();
    for i in 0..n {
        let x = human_x(i, n);
        let s = match config.kind {
            ScenarioKind::Seated => {
                let s = seated_state(&model, x, STANDING_Z, 0.0)?;
                boxes.push(seat_under(&model, &model.forward(&s)?)?);
                s
            }
            _ => standing_state(&model, x, STANDING_Z, 0.0)?,
        };
        gt.push(s);
    }
    if config.kind == ScenarioKind::Standing {
        boxes.push(FloorBox {
            x: (1.2, 1.7),
            z: (3.6, 4.1),
            top_y: FLOOR_Y - 0.45,
        });
    }
    let cloud = room(config.kind, &boxes)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let spec = init_spec(config.difficulty);
    let init = gt.iter().map(|g| sample_query(g, &spec, &mut rng)).collect::<Result<Vec<_>>>()?;
    Ok(SyntheticScenario {
        config: config.clone(),
        model_parts,
        model,
        cloud,
        intrinsics: default_intrinsics(),
        gt,
        init,
    })
}

/// Deterministic stand-in for image features: every cell stores functions
/// of the depth of the nearest scene point that projects into it, zero
/// where nothing projects.
pub fn synthesize_features(
    cloud: &ScenePointCloud,
    intrinsics: &CameraIntrinsics,
    level_channels: [usize; NUM_LEVELS],
    patch_size: f64,
    seed: u64,
) -> Result<VisualFeatureGrids> {
    let rows = (intrinsics.height as f64 / patch_size).ceil() as usize;
    let cols = (intrinsics.width as f64 / patch_size).ceil() as usize;
    let mut depth = vec![f64::INFINITY; rows * cols];
    for p in cloud.points() {
        if let Some((u, v)) = intrinsics.project(p).pixel() {
            if intrinsics.contains(u, v) {
                let (r, c) = ((v / patch_size) as usize, (u / patch_size) as usize);
                if r < rows && c < cols {
                    let d = &mut depth[r * cols + c];
                    *d = d.min(p.z);
                }
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut grid = |channels: usize| {
        let freq: Vec<(f64, f64)> = (0..channels)
            .map(|_| (rng.random_range(0.5..4.0), rng.random_range(0.0..std::f64::consts::TAU)))
            .collect();
        let mut data = Vec::with_capacity(rows * cols * channels);
        for &d in &depth {
            for &(f, phase) in &freq {
                data.push(if d.is_finite() { libm::sin(f * d + phase) } else { 0.0 });
            }
        }
        FeatureGrid { channels, data }
    };
    let streams: [[FeatureGrid; NUM_LEVELS]; NUM_STREAMS] =
        std::array::from_fn(|_| std::array::from_fn(|l| grid(level_channels[l])));
    VisualFeatureGrids::new(rows, cols, patch_size, *intrinsics, streams)
}

/// Contact vertices of `state` within `DEFAULT_CONTACT_TAU` of the scene.
pub fn contact_count(model: &BodyModel, state: &HumanState, cloud: &ScenePointCloud) -> Result<usize> {
    let index = crate::scene::SpatialIndex::new(cloud.clone());
    let mesh = model.forward(state)?;
    let labels = crate::metrics::contact_labels(model, &mesh, &index, DEFAULT_CONTACT_TAU)?;
    Ok(labels.into_iter().filter(|l| *l).count())
}
