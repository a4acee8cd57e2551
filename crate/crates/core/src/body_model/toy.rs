//! Procedural low-poly humanoid with the default 52-joint layout.
//!
//! The mesh is a set of short tubes around the skeleton bones plus a few
//! hand and head vertices (167 vertices). It exists so the engine, its tests
//! and the synthetic scenarios run without licensed body-model assets.

use nalgebra::{DMatrix, DVector, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{BodyModel, BodyModelParts, NUM_SHAPE, NUM_SURFACE_PROBES};
use crate::error::Result;

#[derive(Clone, Debug)]
pub struct ToyModelOptions {
    /// Makes the first blendshape a scaled copy of the template, so that
    /// uniform scaling is exactly representable in shape space.
    pub template_in_shape_span: bool,
    /// Seed for the smooth random blendshapes.
    pub seed: u64,
    /// Inserts jaw and eye joints (55 joints) and maps the state onto them
    /// through `state_joint_ids`, like a full SMPL-X layout.
    pub smplx_joint_layout: bool,
}

impl Default for ToyModelOptions {
    fn default() -> Self {
        Self {
            template_in_shape_span: true,
            seed: 0x6d6f_64656c,
            smplx_joint_layout: false,
        }
    }
}

pub struct ToyJoint {
    pub name: &'static str,
    pub parent: Option<usize>,
    pub position: Vector3<f64>,
}

const BODY: [(&str, Option<usize>, [f64; 3]); 22] = [
    ("pelvis", None, [0.0, 0.0, 0.0]),
    ("left_hip", Some(0), [0.08, -0.08, 0.0]),
    ("right_hip", Some(0), [-0.08, -0.08, 0.0]),
    ("spine1", Some(0), [0.0, 0.11, -0.01]),
    ("left_knee", Some(1), [0.10, -0.47, 0.0]),
    ("right_knee", Some(2), [-0.10, -0.47, 0.0]),
    ("spine2", Some(3), [0.0, 0.24, -0.01]),
    ("left_ankle", Some(4), [0.10, -0.87, -0.03]),
    ("right_ankle", Some(5), [-0.10, -0.87, -0.03]),
    ("spine3", Some(6), [0.0, 0.30, 0.0]),
    ("left_foot", Some(7), [0.11, -0.92, 0.10]),
    ("right_foot", Some(8), [-0.11, -0.92, 0.10]),
    ("neck", Some(9), [0.0, 0.52, -0.01]),
    ("left_collar", Some(9), [0.07, 0.44, 0.0]),
    ("right_collar", Some(9), [-0.07, 0.44, 0.0]),
    ("head", Some(12), [0.0, 0.62, 0.03]),
    ("left_shoulder", Some(13), [0.17, 0.45, -0.01]),
    ("right_shoulder", Some(14), [-0.17, 0.45, -0.01]),
    ("left_elbow", Some(16), [0.43, 0.45, -0.02]),
    ("right_elbow", Some(17), [-0.43, 0.45, -0.02]),
    ("left_wrist", Some(18), [0.68, 0.45, -0.02]),
    ("right_wrist", Some(19), [-0.68, 0.45, -0.02]),
];

/// Rings per bone and tube radius, indexed by the bone's child joint.
const BONE_TUBES: [(usize, f64); 22] = [
    (0, 0.0),
    (1, 0.07),
    (1, 0.07),
    (1, 0.12),
    (2, 0.065),
    (2, 0.065),
    (1, 0.12),
    (2, 0.05),
    (2, 0.05),
    (1, 0.12),
    (2, 0.035),
    (2, 0.035),
    (1, 0.06),
    (1, 0.05),
    (1, 0.05),
    (1, 0.07),
    (1, 0.05),
    (1, 0.05),
    (2, 0.045),
    (2, 0.045),
    (2, 0.035),
    (2, 0.035),
];

/// Finger base offsets from the left wrist, in SMPL-X order.
const FINGERS: [(&str, [f64; 3], [f64; 3]); 5] = [
    ("index", [0.085, 0.0, 0.025], [1.0, 0.0, 0.0]),
    ("middle", [0.09, 0.0, 0.005], [1.0, 0.0, 0.0]),
    ("pinky", [0.075, 0.0, -0.035], [1.0, 0.0, -0.1]),
    ("ring", [0.085, 0.0, -0.015], [1.0, 0.0, -0.05]),
    ("thumb", [0.025, -0.01, 0.035], [0.6, 0.0, 0.8]),
];
const FINGER_SEGMENTS: [f64; 2] = [0.035, 0.025];
const FINGERTIP_EXTENT: f64 = 0.02;

/// Skeleton in the canonical frame (y up, z forward, x to the body's left).
pub fn skeleton(smplx_joint_layout: bool) -> Vec<ToyJoint> {
    let mut joints: Vec<ToyJoint> = BODY
        .iter()
        .map(|(name, parent, p)| ToyJoint {
            name,
            parent: *parent,
            position: Vector3::from(*p),
        })
        .collect();
    if smplx_joint_layout {
        let head = joints[15].position;
        for (name, off) in [
            ("jaw", [0.0, -0.03, 0.05]),
            ("left_eye", [0.03, 0.03, 0.07]),
            ("right_eye", [-0.03, 0.03, 0.07]),
        ] {
            joints.push(ToyJoint {
                name,
                parent: Some(15),
                position: head + Vector3::from(off),
            });
        }
    }
    for (side, wrist) in [(1.0, 20usize), (-1.0, 21usize)] {
        let wrist_pos = joints[wrist].position;
        for (fname, base, dir) in FINGERS {
            let dir = Vector3::new(dir[0] * side, dir[1], dir[2]).normalize();
            let mut pos = wrist_pos + Vector3::new(base[0] * side, base[1], base[2]);
            let mut parent = wrist;
            for seg in 0..3 {
                let idx = joints.len();
                joints.push(ToyJoint {
                    name: finger_joint_name(side > 0.0, fname, seg),
                    parent: Some(parent),
                    position: pos,
                });
                parent = idx;
                if let Some(len) = FINGER_SEGMENTS.get(seg) {
                    pos += dir * *len;
                }
            }
        }
    }
    joints
}

fn finger_joint_name(left: bool, finger: &str, seg: usize) -> &'static str {
    // Names are only used for display; leak-free static table.
    const NAMES: [[&str; 3]; 10] = [
        ["left_index1", "left_index2", "left_index3"],
        ["left_middle1", "left_middle2", "left_middle3"],
        ["left_pinky1", "left_pinky2", "left_pinky3"],
        ["left_ring1", "left_ring2", "left_ring3"],
        ["left_thumb1", "left_thumb2", "left_thumb3"],
        ["right_index1", "right_index2", "right_index3"],
        ["right_middle1", "right_middle2", "right_middle3"],
        ["right_pinky1", "right_pinky2", "right_pinky3"],
        ["right_ring1", "right_ring2", "right_ring3"],
        ["right_thumb1", "right_thumb2", "right_thumb3"],
    ];
    let f = FINGERS.iter().position(|(n, _, _)| *n == finger).unwrap_or(0);
    NAMES[f + if left { 0 } else { 5 }][seg]
}

struct MeshBuilder {
    vertices: Vec<Vector3<f64>>,
    /// (joint, weight) pairs per vertex.
    skin: Vec<Vec<(usize, f64)>>,
    /// Outward direction used by the girth blendshape.
    radial: Vec<Vector3<f64>>,
    faces: Vec<[usize; 3]>,
    contact: Vec<usize>,
}

impl MeshBuilder {
    fn push(&mut self, p: Vector3<f64>, skin: Vec<(usize, f64)>, radial: Vector3<f64>, contact: bool) -> usize {
        let i = self.vertices.len();
        self.vertices.push(p);
        self.skin.push(skin);
        self.radial.push(radial);
        if contact {
            self.contact.push(i);
        }
        i
    }

    fn quad(&mut self, a: usize, b: usize, c: usize, d: usize) {
        self.faces.push([a, b, c]);
        self.faces.push([a, c, d]);
    }
}

/// Orthonormal pair perpendicular to `axis`, with `u` as close to +y as possible.
fn ring_frame(axis: &Vector3<f64>) -> (Vector3<f64>, Vector3<f64>) {
    let up = if axis.y.abs() < 0.9 { Vector3::y() } else { Vector3::z() };
    let u = (up - axis * axis.dot(&up)).normalize();
    (u, axis.cross(&u))
}

fn is_contact_bone(child: usize) -> bool {
    // pelvis/hips, lower spine, thighs, feet
    matches!(child, 1 | 2 | 3 | 4 | 5 | 10 | 11)
}

pub fn toy_model_parts(opts: &ToyModelOptions) -> BodyModelParts {
    let joints = skeleton(opts.smplx_joint_layout);
    let nj = joints.len();
    let hand_offset = if opts.smplx_joint_layout { 25 } else { 22 };
    let mut mb = MeshBuilder {
        vertices: Vec::new(),
        skin: Vec::new(),
        radial: Vec::new(),
        faces: Vec::new(),
        contact: Vec::new(),
    };

    let mut foot_end_rings: [Vec<usize>; 2] = [Vec::new(), Vec::new()];
    for child in 1..22 {
        let parent = BODY[child].1.unwrap_or(0);
        let (rings, radius) = BONE_TUBES[child];
        let a = joints[parent].position;
        let b = joints[child].position;
        let axis = (b - a).normalize();
        let (u, v) = ring_frame(&axis);
        let fractions: &[f64] = if rings == 2 { &[1.0 / 3.0, 2.0 / 3.0] } else { &[0.5] };
        let mut ring_ids = Vec::new();
        for &f in fractions {
            let center = a + (b - a) * f;
            let skin = if f > 0.5 {
                vec![(parent, 0.8), (child, 0.2)]
            } else {
                vec![(parent, 1.0)]
            };
            let ids: Vec<usize> = (0..4)
                .map(|k| {
                    let theta = std::f64::consts::FRAC_PI_4 * (1 + 2 * k) as f64;
                    let dir = u * libm::cos(theta) + v * libm::sin(theta);
                    // Back-facing spine vertices also count as contact.
                    let back = matches!(child, 6 | 9) && dir.z < 0.0;
                    mb.push(center + dir * radius, skin.clone(), dir, is_contact_bone(child) || back)
                })
                .collect();
            ring_ids.push(ids);
        }
        for r in &ring_ids {
            mb.quad(r[0], r[1], r[2], r[3]);
        }
        if rings == 2 {
            let (r0, r1) = (&ring_ids[0], &ring_ids[1]);
            for k in 0..4 {
                let k1 = (k + 1) % 4;
                mb.quad(r0[k], r0[k1], r1[k1], r1[k]);
            }
        }
        if child == 10 || child == 11 {
            foot_end_rings[child - 10] = ring_ids[1].clone();
        }
    }

    // Toes: two vertices ahead of each foot joint at sole height.
    for (side, foot) in [(0usize, 10usize), (1, 11)] {
        let ankle = joints[foot - 3].position;
        let fj = joints[foot].position;
        let axis = (fj - ankle).normalize();
        let (u, v) = ring_frame(&axis);
        let ring = foot_end_rings[side].clone();
        let radius = BONE_TUBES[foot].1;
        let tip = fj + axis * 0.04;
        let t0 = mb.push(tip + (-u * 0.7 - v * 0.7) * radius, vec![(foot, 1.0)], -u, true);
        let t1 = mb.push(tip + (-u * 0.7 + v * 0.7) * radius, vec![(foot, 1.0)], -u, true);
        // ring indices 1 and 2 are the lower pair (theta = 135, 225 degrees)
        mb.quad(ring[2], ring[1], t1, t0);
    }

    // Head: a ring around the head joint and a cap vertex.
    {
        let head = joints[15].position;
        let ring: Vec<usize> = (0..4)
            .map(|k| {
                let theta = std::f64::consts::FRAC_PI_4 * (1 + 2 * k) as f64;
                let dir = Vector3::new(libm::sin(theta), 0.0, libm::cos(theta));
                mb.push(head + Vector3::new(0.0, 0.03, 0.0) + dir * 0.08, vec![(15, 1.0)], dir, false)
            })
            .collect();
        let cap = mb.push(head + Vector3::new(0.0, 0.12, 0.0), vec![(15, 1.0)], Vector3::y(), false);
        for k in 0..4 {
            mb.faces.push([ring[k], ring[(k + 1) % 4], cap]);
        }
        mb.quad(ring[0], ring[1], ring[2], ring[3]);
    }

    // Hands: two palm vertices plus three per finger.
    for (hand, side, wrist) in [(0usize, 1.0, 20usize), (1, -1.0, 21)] {
        let w = joints[wrist].position;
        let palm_a = mb.push(w + Vector3::new(0.05 * side, 0.0, 0.03), vec![(wrist, 1.0)], Vector3::y(), true);
        let palm_b = mb.push(w + Vector3::new(0.05 * side, 0.0, -0.03), vec![(wrist, 1.0)], Vector3::y(), true);
        let mut middle_mid = None;
        for f in 0..5 {
            let j1 = hand_offset + hand * 15 + f * 3;
            let (p1, p2, p3) = (joints[j1].position, joints[j1 + 1].position, joints[j1 + 2].position);
            let dir = (p3 - p2).normalize();
            let m1 = mb.push((p1 + p2) * 0.5 + Vector3::new(0.0, 0.006, 0.0), vec![(j1, 1.0)], Vector3::y(), true);
            let m2 = mb.push((p2 + p3) * 0.5 - Vector3::new(0.0, 0.006, 0.0), vec![(j1 + 1, 1.0)], -Vector3::y(), true);
            let tip = mb.push(p3 + dir * FINGERTIP_EXTENT, vec![(j1 + 2, 1.0)], dir, true);
            mb.faces.push([palm_a, m1, m2]);
            mb.faces.push([m1, m2, tip]);
            if f == 1 {
                middle_mid = Some(m1);
            }
        }
        if let Some(m) = middle_mid {
            mb.faces.push([palm_a, palm_b, m]);
        }
    }

    // Jaw/eye joints get no skinned vertices: they stay frozen.
    let nv = mb.vertices.len();
    let mut skin_weights = vec![0.0; nv * nj];
    for (v, s) in mb.skin.iter().enumerate() {
        for &(j, w) in s {
            skin_weights[v * nj + j] += w;
        }
    }

    let joint_regressor = build_regressor(&mb.vertices, &joints);
    let shape_dirs = build_shape_dirs(&mb, &joints, opts);

    let surface_probe_ids = farthest_point_sampling(&mb.vertices, NUM_SURFACE_PROBES, 0);
    let state_joint_ids = opts.smplx_joint_layout.then(|| {
        (0..22).chain(25..55).collect::<Vec<usize>>()
    });

    BodyModelParts {
        template_vertices: mb.vertices.iter().map(|v| [v.x, v.y, v.z]).collect(),
        shape_dirs,
        joint_regressor,
        parents: joints.iter().map(|j| j.parent).collect(),
        skin_weights,
        faces: mb.faces,
        contact_vertex_ids: mb.contact,
        surface_probe_ids,
        state_joint_ids,
        head_joint: None,
        vertex_areas: None,
    }
}

pub fn build_toy_model(opts: &ToyModelOptions) -> Result<BodyModel> {
    BodyModel::new(toy_model_parts(opts))
}

/// Affine regressor rows: each joint is a minimum-norm affine combination of
/// its nearest template vertices.
fn build_regressor(vertices: &[Vector3<f64>], joints: &[ToyJoint]) -> Vec<f64> {
    const NEIGHBORS: usize = 8;
    let nv = vertices.len();
    let mut out = vec![0.0; joints.len() * nv];
    for (j, joint) in joints.iter().enumerate() {
        let mut idx: Vec<usize> = (0..nv).collect();
        idx.sort_by(|&a, &b| {
            (vertices[a] - joint.position)
                .norm_squared()
                .total_cmp(&(vertices[b] - joint.position).norm_squared())
                .then(a.cmp(&b))
        });
        idx.truncate(NEIGHBORS);
        let a = DMatrix::from_fn(4, NEIGHBORS, |r, c| if r < 3 { vertices[idx[c]][r] } else { 1.0 });
        let b = DVector::from_vec(vec![joint.position.x, joint.position.y, joint.position.z, 1.0]);
        let w = a
            .clone()
            .svd(true, true)
            .solve(&b, 1e-10)
            .unwrap_or_else(|_| DVector::from_element(NEIGHBORS, 1.0 / NEIGHBORS as f64));
        // Renormalize so the row is exactly affine.
        let sum: f64 = w.iter().sum();
        for (c, &v) in idx.iter().enumerate() {
            out[j * nv + v] = w[c] / sum;
        }
    }
    out
}

fn build_shape_dirs(mb: &MeshBuilder, joints: &[ToyJoint], opts: &ToyModelOptions) -> Vec<Vec<[f64; 3]>> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let nj = joints.len();
    let mut dirs: Vec<Vec<Vector3<f64>>> = Vec::with_capacity(NUM_SHAPE);
    let smooth_random = |rng: &mut ChaCha8Rng, scale: f64| -> Vec<Vector3<f64>> {
        let per_joint: Vec<Vector3<f64>> = (0..nj)
            .map(|_| {
                Vector3::new(
                    StandardNormal.sample(rng),
                    StandardNormal.sample(rng),
                    StandardNormal.sample(rng),
                ) * scale
            })
            .collect();
        mb.skin
            .iter()
            .map(|s| s.iter().fold(Vector3::zeros(), |acc, (j, w)| acc + per_joint[*j] * *w))
            .collect()
    };

    if opts.template_in_shape_span {
        dirs.push(mb.vertices.iter().map(|v| v * 0.1).collect());
    } else {
        dirs.push(smooth_random(&mut rng, 0.03));
    }
    // Leg length.
    dirs.push(mb.vertices.iter().map(|v| Vector3::new(0.0, v.y.min(0.0) * 0.1, 0.0)).collect());
    // Girth.
    dirs.push(mb.radial.iter().map(|r| r * 0.02).collect());
    // Arm span.
    dirs.push(
        mb.vertices
            .iter()
            .map(|v| Vector3::new(if v.x.abs() > 0.15 { v.x.signum() * (v.x.abs() - 0.15) * 0.1 } else { 0.0 }, 0.0, 0.0))
            .collect(),
    );
    while dirs.len() < NUM_SHAPE {
        dirs.push(smooth_random(&mut rng, 0.01));
    }
    dirs.into_iter()
        .map(|d| d.into_iter().map(|v| [v.x, v.y, v.z]).collect())
        .collect()
}

/// Greedy farthest-point sampling starting from vertex `start`; ties go to
/// the lowest index.
pub fn farthest_point_sampling(points: &[Vector3<f64>], k: usize, start: usize) -> Vec<usize> {
    let k = k.min(points.len());
    if k == 0 {
        return Vec::new();
    }
    let mut chosen = vec![start];
    let mut dist: Vec<f64> = points.iter().map(|p| (p - points[start]).norm_squared()).collect();
    while chosen.len() < k {
        let (next, _) = dist
            .iter()
            .enumerate()
            .fold((0usize, f64::NEG_INFINITY), |best, (i, d)| if *d > best.1 { (i, *d) } else { best });
        chosen.push(next);
        for (d, p) in dist.iter_mut().zip(points) {
            *d = d.min((p - points[next]).norm_squared());
        }
    }
    chosen
}
