//! Independent reference implementations for integration tests.
#![allow(dead_code)]

use graft::body_model::{
    axis_angle_to_rot6d, rot6d_to_matrix, BodyModel, HumanState, NUM_SHAPE, NUM_STATE_JOINTS,
};
use graft::training::LossWeights;
use nalgebra::{Matrix3, Matrix4, Vector3, Vector4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_vec<R: Rng>(r: &mut R, scale: f64) -> Vector3<f64> {
    if scale == 0.0 {
        return Vector3::zeros();
    }
    Vector3::new(
        r.random_range(-scale..scale),
        r.random_range(-scale..scale),
        r.random_range(-scale..scale),
    )
}

/// Random pose, shape and translation.
pub fn random_state<R: Rng>(r: &mut R, pose_rad: f64) -> HumanState {
    let mut s = HumanState::identity();
    for slot in 0..NUM_STATE_JOINTS {
        *s.rotation_mut(slot) = axis_angle_to_rot6d(&random_vec(r, pose_rad));
    }
    s.translation = [r.random_range(-1.0..1.0), r.random_range(-1.0..1.0), r.random_range(2.0..4.0)];
    for b in &mut s.shape {
        *b = r.random_range(-1.0..1.0);
    }
    s
}

/// Nearest point by exhaustive scan; ties go to the lowest index.
pub fn brute_nearest(points: &[Vector3<f64>], q: &Vector3<f64>) -> (usize, f64) {
    let mut best = (usize::MAX, f64::INFINITY);
    for (i, p) in points.iter().enumerate() {
        let (dx, dy, dz) = (q.x - p.x, q.y - p.y, q.z - p.z);
        let d2 = dx * dx + dy * dy + dz * dz;
        if d2 < best.1 {
            best = (i, d2);
        }
    }
    best
}

pub fn brute_knn(points: &[Vector3<f64>], q: &Vector3<f64>, k: usize) -> Vec<(usize, f64)> {
    let mut all: Vec<(usize, f64)> = points
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let (dx, dy, dz) = (q.x - p.x, q.y - p.y, q.z - p.z);
            (i, dx * dx + dy * dy + dz * dz)
        })
        .collect();
    all.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    all.truncate(k);
    all
}

fn homogeneous(r: &Matrix3<f64>, t: &Vector3<f64>) -> Matrix4<f64> {
    let mut m = Matrix4::identity();
    m.fixed_view_mut::<3, 3>(0, 0).copy_from(r);
    m.fixed_view_mut::<3, 1>(0, 3).copy_from(t);
    m
}

/// Textbook skinning with 4x4 world transforms:
/// `G_j = G_parent [R_j | J_j - J_parent]`, `v' = sum_j w_j G_j [v - J_j; 1] + tau`.
pub fn naive_lbs(model: &BodyModel, s: &HumanState) -> (Vec<Vector3<f64>>, Vec<Vector3<f64>>) {
    let p = model.parts();
    let nv = p.template_vertices.len();
    let nj = p.parents.len();
    let mut shaped: Vec<Vector3<f64>> = p.template_vertices.iter().map(|v| Vector3::from(*v)).collect();
    for (k, dir) in p.shape_dirs.iter().enumerate() {
        for (v, d) in shaped.iter_mut().zip(dir) {
            *v += Vector3::from(*d) * s.shape[k];
        }
    }
    let joints: Vec<Vector3<f64>> = (0..nj)
        .map(|j| (0..nv).fold(Vector3::zeros(), |a, v| a + shaped[v] * p.joint_regressor[j * nv + v]))
        .collect();
    let mut local = vec![Matrix3::identity(); nj];
    for slot in 0..NUM_STATE_JOINTS {
        local[model.joint_of_slot(slot)] = rot6d_to_matrix(s.rotation(slot)).unwrap();
    }
    let mut world: Vec<Option<Matrix4<f64>>> = vec![None; nj];
    // Parents may come after children in the file; resolve recursively.
    fn resolve(
        j: usize,
        p: &[Option<usize>],
        local: &[Matrix3<f64>],
        joints: &[Vector3<f64>],
        world: &mut Vec<Option<Matrix4<f64>>>,
    ) -> Matrix4<f64> {
        if let Some(m) = world[j] {
            return m;
        }
        let m = match p[j] {
            None => homogeneous(&local[j], &joints[j]),
            Some(q) => resolve(q, p, local, joints, world) * homogeneous(&local[j], &(joints[j] - joints[q])),
        };
        world[j] = Some(m);
        m
    }
    for j in 0..nj {
        resolve(j, &p.parents, &local, &joints, &mut world);
    }
    let world: Vec<Matrix4<f64>> = world.into_iter().map(Option::unwrap).collect();
    let tau = Vector3::from(s.translation);
    let verts = (0..nv)
        .map(|v| {
            let mut acc = Vector3::zeros();
            for j in 0..nj {
                let w = p.skin_weights[v * nj + j];
                if w != 0.0 {
                    let r = shaped[v] - joints[j];
                    let h = world[j] * Vector4::new(r.x, r.y, r.z, 1.0);
                    acc += Vector3::new(h.x, h.y, h.z) * w;
                }
            }
            acc + tau
        })
        .collect();
    let posed_joints = (0..nj)
        .map(|j| world[j].fixed_view::<3, 1>(0, 3).into_owned() + tau)
        .collect();
    (verts, posed_joints)
}

/// Solves `A x = b` by Gaussian elimination with partial pivoting.
#[allow(clippy::needless_range_loop)]
pub fn gauss_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for c in 0..n {
        let piv = (c..n).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs())).unwrap();
        a.swap(c, piv);
        b.swap(c, piv);
        for r in c + 1..n {
            let f = a[r][c] / a[c][c];
            for k in c..n {
                a[r][k] -= f * a[c][k];
            }
            b[r] -= f * b[c];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|k| a[r][k] * x[k]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    x
}

/// Least-squares template coefficients from the normal equations.
pub fn template_offset_oracle(model: &BodyModel) -> [f64; NUM_SHAPE] {
    let p = model.parts();
    let dot = |a: &[[f64; 3]], b: &[[f64; 3]]| -> f64 {
        a.iter().zip(b).map(|(x, y)| x[0] * y[0] + x[1] * y[1] + x[2] * y[2]).sum()
    };
    let gram = (0..NUM_SHAPE)
        .map(|i| (0..NUM_SHAPE).map(|j| dot(&p.shape_dirs[i], &p.shape_dirs[j])).collect())
        .collect();
    let rhs = (0..NUM_SHAPE).map(|i| dot(&p.shape_dirs[i], &p.template_vertices)).collect();
    let x = gauss_solve(gram, rhs);
    std::array::from_fn(|i| x[i])
}

/// Horn's closed-form absolute orientation via the quaternion eigenproblem,
/// extended with the optimal scale; returns the mean aligned error (mm).
pub fn horn_pa_mpjpe(x: &[Vector3<f64>], y: &[Vector3<f64>]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<Vector3<f64>>() / n;
    let my = y.iter().sum::<Vector3<f64>>() / n;
    let mut m = Matrix3::zeros();
    for (a, b) in x.iter().zip(y) {
        m += (a - mx) * (b - my).transpose();
    }
    let (sxx, sxy, sxz) = (m[(0, 0)], m[(0, 1)], m[(0, 2)]);
    let (syx, syy, syz) = (m[(1, 0)], m[(1, 1)], m[(1, 2)]);
    let (szx, szy, szz) = (m[(2, 0)], m[(2, 1)], m[(2, 2)]);
    #[rustfmt::skip]
    let nmat = Matrix4::new(
        sxx + syy + szz, syz - szy,        szx - sxz,        sxy - syx,
        syz - szy,       sxx - syy - szz,  sxy + syx,        szx + sxz,
        szx - sxz,       sxy + syx,        -sxx + syy - szz, syz + szy,
        sxy - syx,       szx + sxz,        syz + szy,        -sxx - syy + szz,
    );
    let eig = nmat.symmetric_eigen();
    let (imax, _) = eig.eigenvalues.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap();
    let q = eig.eigenvectors.column(imax);
    let (w, qx, qy, qz) = (q[0], q[1], q[2], q[3]);
    let r = Matrix3::new(
        w * w + qx * qx - qy * qy - qz * qz,
        2.0 * (qx * qy - w * qz),
        2.0 * (qx * qz + w * qy),
        2.0 * (qy * qx + w * qz),
        w * w - qx * qx + qy * qy - qz * qz,
        2.0 * (qy * qz - w * qx),
        2.0 * (qz * qx - w * qy),
        2.0 * (qz * qy + w * qx),
        w * w - qx * qx - qy * qy + qz * qz,
    );
    let num: f64 = x.iter().zip(y).map(|(a, b)| (b - my).dot(&(r * (a - mx)))).sum();
    let den: f64 = x.iter().map(|a| (a - mx).norm_squared()).sum();
    let c = num / den;
    let err: f64 = x.iter().zip(y).map(|(a, b)| ((r * (a - mx)) * c + my - b).norm()).sum();
    1000.0 * err / n
}

/// Loss written out term by term from the definition.
pub fn naive_loss(model: &BodyModel, pred: &HumanState, gt: &HumanState, w: &LossWeights) -> f64 {
    let mut rot = 0.0;
    for slot in 0..NUM_STATE_JOINTS {
        let weight = if slot == 0 {
            w.global
        } else if slot <= 21 {
            w.body
        } else if slot <= 36 {
            w.left_hand
        } else {
            w.right_hand
        };
        let (a, b) = (pred.rotation(slot), gt.rotation(slot));
        rot += weight * (0..6).map(|i| (a[i] - b[i]).powi(2)).sum::<f64>();
    }
    let (vp, _) = naive_lbs(model, pred);
    let (vg, _) = naive_lbs(model, gt);
    let n = vp.len() as f64;
    let mp = vp.iter().sum::<Vector3<f64>>() / n;
    let mg = vg.iter().sum::<Vector3<f64>>() / n;
    let mut vert = 0.0;
    let mut norm = 0.0;
    for (a, b) in vp.iter().zip(&vg) {
        vert += (a - b).norm_squared();
        norm += ((a - mp) - (b - mg)).norm_squared();
    }
    rot + w.vertex * vert + w.normalized * norm
}

pub fn max_abs_diff(a: &[Vector3<f64>], b: &[Vector3<f64>]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).amax())
        .fold(0.0, f64::max)
}
