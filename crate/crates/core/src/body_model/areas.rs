//! Mixed-Voronoi vertex areas (Meyer et al. style), used as tessellation
//! corrections for per-vertex metrics.

use nalgebra::Vector3;

pub fn triangle_area(a: &Vector3<f64>, b: &Vector3<f64>, c: &Vector3<f64>) -> f64 {
    0.5 * (b - a).cross(&(c - a)).norm()
}

/// Per-vertex mixed-Voronoi areas. Non-obtuse triangles split by the
/// circumcentric Voronoi rule; obtuse triangles give half their area to the
/// obtuse corner and a quarter to each other corner. The areas of all
/// vertices always sum to the total surface area.
pub fn mixed_voronoi_areas(vertices: &[Vector3<f64>], faces: &[[usize; 3]]) -> Vec<f64> {
    let mut areas = vec![0.0; vertices.len()];
    for f in faces {
        let p = [vertices[f[0]], vertices[f[1]], vertices[f[2]]];
        let area = triangle_area(&p[0], &p[1], &p[2]);
        if area <= 0.0 {
            continue;
        }
        // Edge vectors out of each corner; dot < 0 means that corner is obtuse.
        let dots: [f64; 3] = std::array::from_fn(|i| {
            let (a, b, c) = (p[i], p[(i + 1) % 3], p[(i + 2) % 3]);
            (b - a).dot(&(c - a))
        });
        match dots.iter().position(|d| *d < 0.0) {
            None => {
                // cot of the angle at corner i = dot / (2 * area)
                let cot: [f64; 3] = std::array::from_fn(|i| dots[i] / (2.0 * area));
                for i in 0..3 {
                    let (a, b, c) = (i, (i + 1) % 3, (i + 2) % 3);
                    let len_ab = (p[b] - p[a]).norm_squared();
                    let len_ac = (p[c] - p[a]).norm_squared();
                    areas[f[a]] += (len_ac * cot[b] + len_ab * cot[c]) / 8.0;
                }
            }
            Some(obtuse) => {
                for i in 0..3 {
                    areas[f[i]] += if i == obtuse { area / 2.0 } else { area / 4.0 };
                }
            }
        }
    }
    areas
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn equilateral_triangle_splits_evenly() {
        let s3 = 3f64.sqrt();
        let v = vec![
            Vector3::new(0.0, 0.0, 0.0),
            Vector3::new(1.0, 0.0, 0.0),
            Vector3::new(0.5, s3 / 2.0, 0.0),
        ];
        let a = mixed_voronoi_areas(&v, &[[0, 1, 2]]);
        let total = s3 / 4.0;
        for x in a {
            assert!((x - total / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn obtuse_triangle_uses_half_quarter_rule() {
        let v = vec![
            Vector3::new(0.0, 0.0, 0.0),
            Vector3::new(4.0, 0.0, 0.0),
            Vector3::new(2.0, 0.5, 0.0),
        ];
        let a = mixed_voronoi_areas(&v, &[[0, 1, 2]]);
        assert!((a[2] - 0.5).abs() < 1e-15);
        assert!((a[0] - 0.25).abs() < 1e-15);
        assert!((a[1] - 0.25).abs() < 1e-15);
    }

    #[test]
    fn areas_sum_to_surface_area_on_a_grid() {
        // 3x3 grid of unit-ish squares with a skewed interior vertex.
        let mut v = Vec::new();
        for y in 0..4 {
            for x in 0..4 {
                let wobble = if (x, y) == (1, 2) { 0.3 } else { 0.0 };
                v.push(Vector3::new(x as f64 + wobble, y as f64, 0.1 * (x * y) as f64));
            }
        }
        let mut faces = Vec::new();
        for y in 0..3 {
            for x in 0..3 {
                let i = y * 4 + x;
                faces.push([i, i + 1, i + 5]);
                faces.push([i, i + 5, i + 4]);
            }
        }
        let total: f64 = faces
            .iter()
            .map(|f| triangle_area(&v[f[0]], &v[f[1]], &v[f[2]]))
            .sum();
        let sum: f64 = mixed_voronoi_areas(&v, &faces).iter().sum();
        assert!((sum - total).abs() < 1e-12);
    }
}
