//! Continuous 6D rotation parameterization.
//!
//! A rotation is stored as the first two columns of its matrix,
//! `[c1.x, c1.y, c1.z, c2.x, c2.y, c2.z]`. Decoding runs Gram–Schmidt on the
//! two columns and completes the frame with a cross product, so any pair of
//! non-parallel vectors maps to a proper rotation.

use nalgebra::{Matrix3, Vector3};

use crate::error::{GraftError, Result};

pub type Rot6 = [f64; 6];

pub const IDENTITY_6D: Rot6 = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0];

/// Columns shorter than this cannot be normalized.
const MIN_COLUMN_NORM: f64 = 1e-12;
/// Columns whose |cosine| reaches `1 - PARALLEL_EPS` are treated as parallel.
const PARALLEL_EPS: f64 = 1e-8;

pub fn rot6d_to_matrix(r: &Rot6) -> Result<Matrix3<f64>> {
    let a1 = Vector3::new(r[0], r[1], r[2]);
    let a2 = Vector3::new(r[3], r[4], r[5]);
    if !a1.iter().chain(a2.iter()).all(|v| v.is_finite()) {
        return Err(GraftError::DegenerateRotation(format!(
            "non-finite component in {r:?}"
        )));
    }
    let n1 = a1.norm();
    let n2 = a2.norm();
    if n1 < MIN_COLUMN_NORM || n2 < MIN_COLUMN_NORM {
        return Err(GraftError::DegenerateRotation(format!(
            "near-zero column (norms {n1:e}, {n2:e})"
        )));
    }
    let b1 = a1 / n1;
    let cos = b1.dot(&a2) / n2;
    if cos.abs() >= 1.0 - PARALLEL_EPS {
        return Err(GraftError::DegenerateRotation(format!(
            "columns are parallel (cosine {cos})"
        )));
    }
    let b2 = (a2 - b1 * b1.dot(&a2)).normalize();
    let b3 = b1.cross(&b2);
    Ok(Matrix3::from_columns(&[b1, b2, b3]))
}

pub fn matrix_to_rot6d(m: &Matrix3<f64>) -> Rot6 {
    [
        m[(0, 0)],
        m[(1, 0)],
        m[(2, 0)],
        m[(0, 1)],
        m[(1, 1)],
        m[(2, 1)],
    ]
}

/// Projects an arbitrary 6D vector back onto the canonical representation
/// of the rotation it decodes to.
pub fn orthonormalize_rot6d(r: &Rot6) -> Result<Rot6> {
    rot6d_to_matrix(r).map(|m| matrix_to_rot6d(&m))
}

/// Rodrigues formula; `axis_angle` is the rotation vector (radians).
pub fn axis_angle_to_matrix(axis_angle: &Vector3<f64>) -> Matrix3<f64> {
    let angle = axis_angle.norm();
    if angle < 1e-15 {
        return Matrix3::identity();
    }
    let k = axis_angle / angle;
    let kx = Matrix3::new(0.0, -k.z, k.y, k.z, 0.0, -k.x, -k.y, k.x, 0.0);
    let (s, c) = (libm::sin(angle), libm::cos(angle));
    Matrix3::identity() + kx * s + kx * kx * (1.0 - c)
}

pub fn matrix_to_axis_angle(m: &Matrix3<f64>) -> Vector3<f64> {
    let cos = ((m.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    let angle = libm::acos(cos);
    let w = Vector3::new(
        m[(2, 1)] - m[(1, 2)],
        m[(0, 2)] - m[(2, 0)],
        m[(1, 0)] - m[(0, 1)],
    );
    if angle < 1e-12 {
        return w * 0.5;
    }
    if std::f64::consts::PI - angle < 1e-6 {
        // Near pi the skew part vanishes; recover the axis from the symmetric part.
        let b = (m + Matrix3::identity()) * 0.5;
        let col = (0..3)
            .max_by(|&a, &b2| b[(a, a)].total_cmp(&b[(b2, b2)]))
            .unwrap_or(0);
        let mut axis: Vector3<f64> = b.column(col).into();
        axis /= axis.norm();
        return axis * angle;
    }
    w * (angle / (2.0 * libm::sin(angle)))
}

pub fn axis_angle_to_rot6d(axis_angle: &Vector3<f64>) -> Rot6 {
    matrix_to_rot6d(&axis_angle_to_matrix(axis_angle))
}
