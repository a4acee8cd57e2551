//! Contact and pose metrics.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::body_model::{BodyModel, PosedMesh};
use crate::error::{GraftError, Result};
use crate::scene::NearestNeighbor;

pub const DEFAULT_CONTACT_TAU: f64 = 0.05;
/// Displacements shorter than this have no direction and are left out of D2S.
pub const MIN_DISPLACEMENT: f64 = 1e-9;

/// Contact label of every contact vertex: nearest scene distance below `tau`.
pub fn contact_labels(
    model: &BodyModel,
    mesh: &PosedMesh,
    index: &dyn NearestNeighbor,
    tau: f64,
) -> Result<Vec<bool>> {
    if !(tau > 0.0) {
        return Err(GraftError::InvalidArgument(format!("contact tau must be positive, got {tau}")));
    }
    model
        .contact_vertex_ids()
        .iter()
        .map(|&v| Ok(index.nearest(&mesh.vertices[v])?.distance < tau))
        .collect()
}

/// Vertex-to-scene vectors `p* - p` over the contact vertices.
pub fn displacements(model: &BodyModel, mesh: &PosedMesh, index: &dyn NearestNeighbor) -> Result<Vec<Vector3<f64>>> {
    model
        .contact_vertex_ids()
        .iter()
        .map(|&v| {
            let p = mesh.vertices[v];
            Ok(index.nearest(&p)?.point - p)
        })
        .collect()
}

/// Area weights of the contact vertices.
pub fn contact_weights(model: &BodyModel) -> Vec<f64> {
    model.contact_vertex_ids().iter().map(|&v| model.vertex_areas()[v]).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// No predicted positives; precision reported as 0.
    pub precision_undefined: bool,
    /// No ground-truth positives; recall reported as 0.
    pub recall_undefined: bool,
}

pub fn contact_prf(pred: &[bool], gt: &[bool]) -> Result<Prf> {
    if pred.len() != gt.len() {
        return Err(GraftError::LengthMismatch(pred.len(), gt.len()));
    }
    let tp = pred.iter().zip(gt).filter(|(p, g)| **p && **g).count() as f64;
    let pp = pred.iter().filter(|p| **p).count() as f64;
    let gp = gt.iter().filter(|g| **g).count() as f64;
    let precision = if pp > 0.0 { tp / pp } else { 0.0 };
    let recall = if gp > 0.0 { tp / gp } else { 0.0 };
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    Ok(Prf {
        precision,
        recall,
        f1,
        precision_undefined: pp == 0.0,
        recall_undefined: gp == 0.0,
    })
}

fn check_lengths(pred: &[Vector3<f64>], gt: &[Vector3<f64>], weights: &[f64]) -> Result<()> {
    if pred.len() != gt.len() {
        return Err(GraftError::LengthMismatch(pred.len(), gt.len()));
    }
    if weights.len() != gt.len() {
        return Err(GraftError::LengthMismatch(weights.len(), gt.len()));
    }
    Ok(())
}

/// Area-weighted mean distance between displacement vectors, in mm.
pub fn v2s(pred: &[Vector3<f64>], gt: &[Vector3<f64>], weights: &[f64]) -> Result<f64> {
    check_lengths(pred, gt, weights)?;
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) {
        return Err(GraftError::InvalidArgument("V2S weights sum to zero".into()));
    }
    let num: f64 = pred
        .iter()
        .zip(gt)
        .zip(weights)
        .map(|((p, g), w)| w * (p - g).norm())
        .sum();
    Ok(1000.0 * num / total)
}

/// Area-weighted mean angle between displacement vectors, in degrees.
pub fn d2s(pred: &[Vector3<f64>], gt: &[Vector3<f64>], weights: &[f64]) -> Result<f64> {
    check_lengths(pred, gt, weights)?;
    let (mut num, mut total) = (0.0, 0.0);
    for ((p, g), w) in pred.iter().zip(gt).zip(weights) {
        let (np, ng) = (p.norm(), g.norm());
        if np < MIN_DISPLACEMENT || ng < MIN_DISPLACEMENT {
            continue;
        }
        // atan2 form: same angle as the clamped arccos, exact at 0 and 180.
        num += w * libm::atan2(p.cross(g).norm(), p.dot(g)).to_degrees();
        total += w;
    }
    if total == 0.0 {
        return Err(GraftError::AllDegenerate);
    }
    Ok(num / total)
}

/// Optimal similarity transform `y ~ c R x + t` (Umeyama).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Similarity {
    pub scale: f64,
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Similarity {
    pub fn apply(&self, x: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * x * self.scale + self.translation
    }
}

pub fn procrustes(x: &[Vector3<f64>], y: &[Vector3<f64>]) -> Result<Similarity> {
    if x.len() != y.len() {
        return Err(GraftError::LengthMismatch(x.len(), y.len()));
    }
    let n = x.len();
    if n < 3 {
        return Err(GraftError::DegenerateConfiguration(format!("need at least 3 joints, got {n}")));
    }
    let inv = 1.0 / n as f64;
    let mx = x.iter().sum::<Vector3<f64>>() * inv;
    let my = y.iter().sum::<Vector3<f64>>() * inv;
    let mut cov = Matrix3::zeros();
    let mut var_x = 0.0;
    let mut spread_y = Matrix3::zeros();
    for (a, b) in x.iter().zip(y) {
        let (xc, yc) = (a - mx, b - my);
        cov += yc * xc.transpose();
        var_x += xc.norm_squared();
        spread_y += yc * yc.transpose();
    }
    cov *= inv;
    var_x *= inv;
    let ey = nalgebra::SymmetricEigen::new(spread_y).eigenvalues;
    let (emin, emax) = ey.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &e| {
        (lo.min(e), hi.max(e))
    });
    let mid = ey.sum() - emin - emax;
    if !(emax > 0.0) || mid <= 1e-12 * emax || var_x <= 0.0 {
        return Err(GraftError::DegenerateConfiguration("joints are collinear or coincident".into()));
    }
    let svd = cov.svd(true, true);
    let (u, vt) = (svd.u.expect("u requested"), svd.v_t.expect("v requested"));
    let mut s = Matrix3::identity();
    if (u.determinant() * vt.determinant()) < 0.0 {
        s[(2, 2)] = -1.0;
    }
    let rotation = u * s * vt;
    let trace_ds: f64 = (0..3).map(|i| svd.singular_values[i] * s[(i, i)]).sum();
    let scale = trace_ds / var_x;
    Ok(Similarity {
        scale,
        rotation,
        translation: my - rotation * mx * scale,
    })
}

/// Mean joint error after optimal similarity alignment, in mm.
pub fn pa_mpjpe(pred: &[Vector3<f64>], gt: &[Vector3<f64>]) -> Result<f64> {
    let t = procrustes(pred, gt)?;
    let err: f64 = pred.iter().zip(gt).map(|(p, g)| (t.apply(p) - g).norm()).sum();
    Ok(1000.0 * err / pred.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub v2s_mm: f64,
    /// `None` when every displacement is degenerate.
    pub d2s_deg: Option<f64>,
    pub pa_mpjpe_mm: f64,
    pub contact_tau_m: f64,
    pub precision_undefined: bool,
    pub recall_undefined: bool,
}

/// Compares one predicted human against its ground truth, each measured
/// against its own scene.
pub fn evaluate(
    model: &BodyModel,
    pred: &PosedMesh,
    pred_scene: &dyn NearestNeighbor,
    gt: &PosedMesh,
    gt_scene: &dyn NearestNeighbor,
    tau: f64,
) -> Result<EvalReport> {
    let prf = contact_prf(
        &contact_labels(model, pred, pred_scene, tau)?,
        &contact_labels(model, gt, gt_scene, tau)?,
    )?;
    let dp = displacements(model, pred, pred_scene)?;
    let dg = displacements(model, gt, gt_scene)?;
    let w = contact_weights(model);
    let d2s_deg = match d2s(&dp, &dg, &w) {
        Ok(v) => Some(v),
        Err(GraftError::AllDegenerate) => None,
        Err(e) => return Err(e),
    };
    let slots: Vec<usize> = model.state_joint_ids().to_vec();
    let pj: Vec<_> = slots.iter().map(|&j| pred.joints[j]).collect();
    let gj: Vec<_> = slots.iter().map(|&j| gt.joints[j]).collect();
    Ok(EvalReport {
        precision: prf.precision,
        recall: prf.recall,
        f1: prf.f1,
        v2s_mm: v2s(&dp, &dg, &w)?,
        d2s_deg,
        pa_mpjpe_mm: pa_mpjpe(&pj, &gj)?,
        contact_tau_m: tau,
        precision_undefined: prf.precision_undefined,
        recall_undefined: prf.recall_undefined,
    })
}
