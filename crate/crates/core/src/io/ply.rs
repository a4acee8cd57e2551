//! Binary little-endian PLY point clouds (`x y z` with optional `nx ny nz`).

use std::path::Path;

use nalgebra::Vector3;

use crate::error::{GraftError, Result};
use crate::scene::ScenePointCloud;

#[derive(Clone, Debug, PartialEq)]
pub struct PlyPoints {
    pub points: Vec<Vector3<f64>>,
    pub normals: Option<Vec<Vector3<f64>>>,
}

fn scalar_size(ty: &str) -> Option<usize> {
    Some(match ty {
        "char" | "uchar" | "int8" | "uint8" => 1,
        "short" | "ushort" | "int16" | "uint16" => 2,
        "int" | "uint" | "int32" | "uint32" | "float" | "float32" => 4,
        "double" | "float64" => 8,
        _ => return None,
    })
}

struct Property {
    name: String,
    ty: String,
    offset: usize,
}

fn read_scalar(ty: &str, b: &[u8]) -> f64 {
    match ty {
        "float" | "float32" => f32::from_le_bytes(b.try_into().unwrap()) as f64,
        "double" | "float64" => f64::from_le_bytes(b.try_into().unwrap()),
        "char" | "int8" => b[0] as i8 as f64,
        "uchar" | "uint8" => b[0] as f64,
        "short" | "int16" => i16::from_le_bytes(b.try_into().unwrap()) as f64,
        "ushort" | "uint16" => u16::from_le_bytes(b.try_into().unwrap()) as f64,
        "int" | "int32" => i32::from_le_bytes(b.try_into().unwrap()) as f64,
        _ => u32::from_le_bytes(b.try_into().unwrap()) as f64,
    }
}

pub fn parse_ply(bytes: &[u8]) -> Result<PlyPoints> {
    let header_end = bytes
        .windows(11)
        .position(|w| w == b"end_header\n")
        .ok_or_else(|| GraftError::Ply("missing end_header".into()))?;
    let header = std::str::from_utf8(&bytes[..header_end])
        .map_err(|_| GraftError::Ply("header is not UTF-8".into()))?;
    let mut lines = header.lines();
    if lines.next().map(str::trim) != Some("ply") {
        return Err(GraftError::Ply("missing ply magic".into()));
    }
    let mut count = None;
    let mut props: Vec<Property> = Vec::new();
    let mut stride = 0;
    let mut in_vertex = false;
    for line in lines {
        let tok: Vec<&str> = line.split_whitespace().collect();
        match tok.as_slice() {
            ["format", fmt, _] => {
                if *fmt != "binary_little_endian" {
                    return Err(GraftError::Ply(format!("unsupported format {fmt}")));
                }
            }
            ["element", name, n] => {
                if count.is_some() && !in_vertex {
                    continue;
                }
                if *name == "vertex" {
                    if count.is_some() {
                        return Err(GraftError::Ply("duplicate vertex element".into()));
                    }
                    count = Some(n.parse::<usize>().map_err(|_| GraftError::Ply(format!("bad count {n}")))?);
                    in_vertex = true;
                } else if count.is_none() {
                    return Err(GraftError::Ply(format!("element {name} precedes the vertex element")));
                } else {
                    in_vertex = false;
                }
            }
            ["property", "list", ..] if in_vertex => {
                return Err(GraftError::Ply("list properties on vertices are unsupported".into()));
            }
            ["property", ty, name] if in_vertex => {
                let size = scalar_size(ty).ok_or_else(|| GraftError::Ply(format!("unknown type {ty}")))?;
                props.push(Property {
                    name: name.to_string(),
                    ty: ty.to_string(),
                    offset: stride,
                });
                stride += size;
            }
            _ => {}
        }
    }
    let n = count.ok_or_else(|| GraftError::Ply("no vertex element".into()))?;
    let find = |name: &str| props.iter().find(|p| p.name == name);
    let xyz = ["x", "y", "z"].map(find);
    if xyz.iter().any(Option::is_none) {
        return Err(GraftError::Ply("vertex element needs x, y and z".into()));
    }
    let nxyz = ["nx", "ny", "nz"].map(find);
    let has_normals = nxyz.iter().all(Option::is_some);

    let body = &bytes[header_end + 11..];
    if body.len() < n * stride {
        return Err(GraftError::Ply(format!(
            "expected {} bytes of vertex data, found {}",
            n * stride,
            body.len()
        )));
    }
    let get = |row: &[u8], p: &Property| {
        let size = scalar_size(&p.ty).expect("checked");
        read_scalar(&p.ty, &row[p.offset..p.offset + size])
    };
    let mut points = Vec::with_capacity(n);
    let mut normals = Vec::with_capacity(if has_normals { n } else { 0 });
    for row in body[..n * stride].chunks_exact(stride.max(1)) {
        let [x, y, z] = xyz.map(|p| get(row, p.expect("checked")));
        points.push(Vector3::new(x, y, z));
        if has_normals {
            let [a, b, c] = nxyz.map(|p| get(row, p.expect("checked")));
            let v = Vector3::new(a, b, c);
            let len = v.norm();
            if !(len > 0.0) {
                return Err(GraftError::Ply(format!("zero normal at vertex {}", points.len() - 1)));
            }
            normals.push(v / len);
        }
    }
    Ok(PlyPoints {
        points,
        normals: has_normals.then_some(normals),
    })
}

/// Writes `x y z nx ny nz` as float32.
pub fn ply_bytes(points: &[Vector3<f64>], normals: Option<&[Vector3<f64>]>) -> Vec<u8> {
    let mut out = format!(
        "ply\nformat binary_little_endian 1.0\nelement vertex {}\nproperty float x\nproperty float y\nproperty float z\n",
        points.len()
    )
    .into_bytes();
    if normals.is_some() {
        out.extend_from_slice(b"property float nx\nproperty float ny\nproperty float nz\n");
    }
    out.extend_from_slice(b"end_header\n");
    for (i, p) in points.iter().enumerate() {
        for v in p.iter() {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        if let Some(n) = normals {
            for v in n[i].iter() {
                out.extend_from_slice(&(*v as f32).to_le_bytes());
            }
        }
    }
    out
}

pub fn write_cloud(path: impl AsRef<Path>, cloud: &ScenePointCloud) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, ply_bytes(cloud.points(), Some(cloud.normals()))).map_err(|e| GraftError::io(path, e))
}

/// Loads a scene, estimating normals with `normals_k` neighbors when the
/// file carries none.
pub fn read_cloud(path: impl AsRef<Path>, camera_origin: Vector3<f64>, normals_k: usize) -> Result<ScenePointCloud> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| GraftError::io(path, e))?;
    let ply = parse_ply(&bytes)?;
    if ply.points.is_empty() {
        return Err(GraftError::EmptyCloud);
    }
    match ply.normals {
        Some(n) => ScenePointCloud::new(ply.points, n, camera_origin),
        None => ScenePointCloud::with_estimated_normals(ply.points, camera_origin, normals_k),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_with_and_without_normals() {
        let pts = vec![Vector3::new(0.5, -1.25, 3.0), Vector3::new(1.0, 2.0, 4.5)];
        let nrm = vec![Vector3::new(0.0, 0.0, -1.0), Vector3::new(0.0, -1.0, 0.0)];
        let parsed = parse_ply(&ply_bytes(&pts, Some(&nrm))).unwrap();
        assert_eq!(parsed.points, pts);
        assert_eq!(parsed.normals.unwrap(), nrm);
        assert!(parse_ply(&ply_bytes(&pts, None)).unwrap().normals.is_none());
    }

    #[test]
    fn skips_extra_properties_and_elements() {
        let mut b = b"ply\nformat binary_little_endian 1.0\ncomment x\nelement vertex 1\nproperty double x\nproperty uchar red\nproperty double y\nproperty double z\nelement face 0\nproperty list uchar int vertex_indices\nend_header\n".to_vec();
        b.extend_from_slice(&1.5f64.to_le_bytes());
        b.push(255);
        b.extend_from_slice(&2.5f64.to_le_bytes());
        b.extend_from_slice(&3.5f64.to_le_bytes());
        let p = parse_ply(&b).unwrap();
        assert_eq!(p.points, vec![Vector3::new(1.5, 2.5, 3.5)]);
    }

    #[test]
    fn rejects_ascii_and_truncation() {
        let ascii = b"ply\nformat ascii 1.0\nelement vertex 0\nproperty float x\nend_header\n";
        assert!(parse_ply(ascii).is_err());
        let b = ply_bytes(&[Vector3::new(1.0, 2.0, 3.0)], None);
        assert!(parse_ply(&b[..b.len() - 2]).is_err());
    }
}
