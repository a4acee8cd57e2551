//! Metric scene geometry: point cloud with normals, pinhole camera and an
//! exact nearest-neighbor index.

mod camera;
pub mod kdtree;

use nalgebra::{Matrix3, SymmetricEigen, Vector3};
use rayon::prelude::*;

use crate::error::{GraftError, Result};
pub use camera::{CameraIntrinsics, Projection, MIN_DEPTH};
use kdtree::KdTree;

pub const DEFAULT_NORMALS_K: usize = 16;
const UNIT_TOL: f64 = 1e-6;

/// Camera-frame points (meters) with unit normals facing the camera.
#[derive(Clone, Debug, PartialEq)]
pub struct ScenePointCloud {
    points: Vec<Vector3<f64>>,
    normals: Vec<Vector3<f64>>,
    camera_origin: Vector3<f64>,
}

impl ScenePointCloud {
    /// Wraps points with given normals. Normals are re-oriented toward the
    /// camera origin; their length must already be 1.
    pub fn new(
        points: Vec<Vector3<f64>>,
        normals: Vec<Vector3<f64>>,
        camera_origin: Vector3<f64>,
    ) -> Result<Self> {
        if points.is_empty() {
            return Err(GraftError::EmptyCloud);
        }
        if normals.len() != points.len() {
            return Err(GraftError::DimensionMismatch(format!(
                "{} points but {} normals",
                points.len(),
                normals.len()
            )));
        }
        if points.iter().any(|p| !p.iter().all(|x| x.is_finite())) {
            return Err(GraftError::InvalidArgument("non-finite scene point".into()));
        }
        let mut normals = normals;
        for (i, (n, p)) in normals.iter_mut().zip(&points).enumerate() {
            if (n.norm() - 1.0).abs() > UNIT_TOL {
                return Err(GraftError::InvalidArgument(format!(
                    "normal {i} has length {}",
                    n.norm()
                )));
            }
            orient_toward(n, &(camera_origin - p));
        }
        Ok(Self {
            points,
            normals,
            camera_origin,
        })
    }

    /// Builds a cloud and estimates normals from `k` nearest neighbors.
    pub fn with_estimated_normals(
        points: Vec<Vector3<f64>>,
        camera_origin: Vector3<f64>,
        k: usize,
    ) -> Result<Self> {
        let normals = estimate_normals(&points, &camera_origin, k)?;
        Ok(Self {
            points,
            normals,
            camera_origin,
        })
    }

    pub fn points(&self) -> &[Vector3<f64>] {
        &self.points
    }

    pub fn normals(&self) -> &[Vector3<f64>] {
        &self.normals
    }

    pub fn camera_origin(&self) -> &Vector3<f64> {
        &self.camera_origin
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Keeps at most `max_points` points at evenly spaced indices.
    pub fn downsample(&self, max_points: usize) -> Result<Self> {
        if max_points == 0 {
            return Err(GraftError::InvalidArgument("max_points must be positive".into()));
        }
        let n = self.points.len();
        if n <= max_points {
            return Ok(self.clone());
        }
        let keep: Vec<usize> = (0..max_points).map(|i| i * n / max_points).collect();
        Ok(Self {
            points: keep.iter().map(|&i| self.points[i]).collect(),
            normals: keep.iter().map(|&i| self.normals[i]).collect(),
            camera_origin: self.camera_origin,
        })
    }
}

fn orient_toward(n: &mut Vector3<f64>, view: &Vector3<f64>) {
    if n.dot(view) < 0.0 {
        *n = -*n;
    }
}

/// PCA normals: smallest-eigenvalue eigenvector of each point's k-NN
/// covariance, flipped to face `camera_origin`.
pub fn estimate_normals(
    points: &[Vector3<f64>],
    camera_origin: &Vector3<f64>,
    k: usize,
) -> Result<Vec<Vector3<f64>>> {
    let needed = k.max(3);
    if points.len() < needed {
        return Err(GraftError::TooFewPoints {
            needed,
            got: points.len(),
        });
    }
    let tree = KdTree::build(points.to_vec());
    let normals = points
        .par_iter()
        .map(|p| {
            let nbrs = tree.knn(p, k);
            let inv = 1.0 / nbrs.len() as f64;
            let mean = nbrs.iter().fold(Vector3::zeros(), |a, (i, _)| a + points[*i]) * inv;
            let cov = nbrs.iter().fold(Matrix3::zeros(), |a, (i, _)| {
                let d = points[*i] - mean;
                a + d * d.transpose()
            }) * inv;
            let eig = SymmetricEigen::new(cov);
            let smallest = eig.eigenvalues.imin();
            let mut n: Vector3<f64> = eig.eigenvectors.column(smallest).into();
            n /= n.norm();
            orient_toward(&mut n, &(camera_origin - p));
            n
        })
        .collect();
    Ok(normals)
}

/// Result of a nearest-point query.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Neighbor {
    pub point: Vector3<f64>,
    pub normal: Vector3<f64>,
    pub distance: f64,
    pub id: usize,
}

/// Read-only nearest-point lookup shared by probing and evaluation.
pub trait NearestNeighbor: Sync {
    fn nearest(&self, p: &Vector3<f64>) -> Result<Neighbor>;
}

/// Immutable kd-tree over a scene cloud.
#[derive(Clone, Debug)]
pub struct SpatialIndex {
    cloud: ScenePointCloud,
    tree: KdTree,
}

impl SpatialIndex {
    pub fn new(cloud: ScenePointCloud) -> Self {
        let tree = KdTree::build(cloud.points.clone());
        Self { cloud, tree }
    }

    pub fn cloud(&self) -> &ScenePointCloud {
        &self.cloud
    }

    pub fn knn(&self, p: &Vector3<f64>, k: usize) -> Vec<(usize, f64)> {
        self.tree.knn(p, k)
    }

    /// View of the same scene uniformly scaled about the camera frame origin.
    pub fn scaled(&self, scale: f64) -> ScaledIndex<'_> {
        ScaledIndex { inner: self, scale }
    }
}

impl NearestNeighbor for SpatialIndex {
    fn nearest(&self, p: &Vector3<f64>) -> Result<Neighbor> {
        let (id, d2) = self.tree.nearest(p).ok_or(GraftError::EmptyCloud)?;
        Ok(Neighbor {
            point: self.cloud.points[id],
            normal: self.cloud.normals[id],
            distance: d2.sqrt(),
            id,
        })
    }
}

/// A scene index seen through a uniform scale `x -> scale * x`.
#[derive(Clone, Copy, Debug)]
pub struct ScaledIndex<'a> {
    inner: &'a SpatialIndex,
    scale: f64,
}

impl NearestNeighbor for ScaledIndex<'_> {
    fn nearest(&self, p: &Vector3<f64>) -> Result<Neighbor> {
        let n = self.inner.nearest(&(p / self.scale))?;
        Ok(Neighbor {
            point: n.point * self.scale,
            normal: n.normal,
            distance: n.distance * self.scale,
            id: n.id,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn plane(n: usize, seed: u64) -> Vec<Vector3<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), 0.0))
            .collect()
    }

    #[test]
    fn plane_normals_face_camera() {
        let pts = plane(300, 1);
        let origin = Vector3::new(0.0, 0.0, 2.0);
        for k in [16, 300] {
            let normals = estimate_normals(&pts, &origin, k).unwrap();
            for n in normals {
                assert!((n - Vector3::z()).norm() < 1e-9, "{n:?}");
            }
        }
    }

    #[test]
    fn too_few_points() {
        let pts = plane(5, 2);
        assert!(matches!(
            estimate_normals(&pts, &Vector3::zeros(), 16),
            Err(GraftError::TooFewPoints { needed: 16, got: 5 })
        ));
    }

    #[test]
    fn nearest_reports_normal_and_distance() {
        let pts = plane(50, 3);
        let cloud = ScenePointCloud::with_estimated_normals(pts.clone(), Vector3::new(0.0, 0.0, 1.0), 16).unwrap();
        let idx = SpatialIndex::new(cloud);
        let q = pts[7] + Vector3::new(0.0, 0.0, 0.25);
        let n = idx.nearest(&q).unwrap();
        assert_eq!(n.id, 7);
        assert!((n.distance - 0.25).abs() < 1e-15);
        assert!((n.normal - Vector3::z()).norm() < 1e-9);
    }

    #[test]
    fn scaled_view_scales_geometry() {
        let pts = plane(80, 4);
        let cloud = ScenePointCloud::with_estimated_normals(pts.clone(), Vector3::new(0.0, 0.0, 1.0), 16).unwrap();
        let idx = SpatialIndex::new(cloud);
        let view = idx.scaled(2.0);
        let q = pts[11] * 2.0 + Vector3::new(0.0, 0.0, 0.5);
        let n = view.nearest(&q).unwrap();
        assert_eq!(n.id, 11);
        assert!((n.point - pts[11] * 2.0).norm() < 1e-15);
        assert!((n.distance - 0.5).abs() < 1e-12);
    }

    #[test]
    fn new_rejects_bad_input() {
        assert!(matches!(
            ScenePointCloud::new(vec![], vec![], Vector3::zeros()),
            Err(GraftError::EmptyCloud)
        ));
        assert!(ScenePointCloud::new(vec![Vector3::z()], vec![Vector3::new(0.0, 0.0, 2.0)], Vector3::zeros()).is_err());
        let c = ScenePointCloud::new(vec![Vector3::z()], vec![Vector3::z()], Vector3::zeros()).unwrap();
        assert_eq!(c.normals()[0], -Vector3::z());
    }

    #[test]
    fn downsample_is_even_and_bounded() {
        let pts = plane(100, 5);
        let c = ScenePointCloud::new(pts.clone(), vec![Vector3::z(); 100], Vector3::new(0.0, 0.0, 1.0)).unwrap();
        let d = c.downsample(10).unwrap();
        assert_eq!(d.len(), 10);
        assert_eq!(d.points()[1], pts[10]);
        assert_eq!(c.downsample(1000).unwrap(), c);
    }
}
