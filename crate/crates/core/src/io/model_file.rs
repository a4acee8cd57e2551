//! Body-model files: a tensor container with a fixed set of names.
//!
//! Mandatory: `template_vertices [V,3]`, `shape_dirs [10,V,3]`,
//! `joint_regressor [J,V]`, `parents [J]` (-1 for the root),
//! `skin_weights [V,J]`, `faces [F,3]`, `contact_vertex_ids [K]`,
//! `surface_probe_ids [27]`. Optional: `state_joint_ids [52]`,
//! `head_joint [1]`, `vertex_areas [V]`. Floating tensors may be f32 or f64.

use std::path::Path;

use crate::body_model::{BodyModel, BodyModelParts};
use crate::error::{GraftError, Result};
use crate::io::container::{Tensor, TensorContainer, TensorData};

pub const MANDATORY: [&str; 8] = [
    "template_vertices",
    "shape_dirs",
    "joint_regressor",
    "parents",
    "skin_weights",
    "faces",
    "contact_vertex_ids",
    "surface_probe_ids",
];

fn invalid(msg: String) -> GraftError {
    GraftError::InvalidModel(msg)
}

fn require<'a>(c: &'a TensorContainer, name: &str) -> Result<&'a Tensor> {
    c.get(name).ok_or_else(|| invalid(format!("missing tensor {name:?}")))
}

fn check_dims(t: &Tensor, expected: &[Option<u64>]) -> Result<()> {
    let ok = t.dims.len() == expected.len() && t.dims.iter().zip(expected).all(|(d, e)| e.is_none_or(|e| *d == e));
    if !ok {
        return Err(invalid(format!("tensor {:?} has dims {:?}", t.name, t.dims)));
    }
    Ok(())
}

fn floats(t: &Tensor) -> Result<Vec<f64>> {
    t.data.to_f64().map_err(|_| invalid(format!("tensor {:?} must be floating point", t.name)))
}

fn ints(t: &Tensor) -> Result<Vec<i64>> {
    t.data
        .as_i64()
        .map(<[i64]>::to_vec)
        .map_err(|_| invalid(format!("tensor {:?} must be i64", t.name)))
}

fn indices(t: &Tensor) -> Result<Vec<usize>> {
    ints(t)?
        .into_iter()
        .map(|v| usize::try_from(v).map_err(|_| invalid(format!("negative index in {:?}", t.name))))
        .collect()
}

fn triples(v: &[f64]) -> Vec<[f64; 3]> {
    v.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect()
}

pub fn parts_from_container(c: &TensorContainer) -> Result<BodyModelParts> {
    let tv = require(c, "template_vertices")?;
    check_dims(tv, &[None, Some(3)])?;
    let nv = tv.dims[0];
    let parents_t = require(c, "parents")?;
    check_dims(parents_t, &[None])?;
    let nj = parents_t.dims[0];

    let sd = require(c, "shape_dirs")?;
    check_dims(sd, &[None, Some(nv), Some(3)])?;
    let jr = require(c, "joint_regressor")?;
    check_dims(jr, &[Some(nj), Some(nv)])?;
    let sw = require(c, "skin_weights")?;
    check_dims(sw, &[Some(nv), Some(nj)])?;
    let faces_t = require(c, "faces")?;
    check_dims(faces_t, &[None, Some(3)])?;
    let contact = require(c, "contact_vertex_ids")?;
    check_dims(contact, &[None])?;
    let probes = require(c, "surface_probe_ids")?;
    check_dims(probes, &[None])?;

    let shape_flat = floats(sd)?;
    let per_dir = nv as usize * 3;
    let shape_dirs = shape_flat.chunks(per_dir.max(1)).map(triples).collect();
    let parents = ints(parents_t)?
        .into_iter()
        .map(|p| match p {
            -1 => Ok(None),
            p if p >= 0 => Ok(Some(p as usize)),
            p => Err(invalid(format!("bad parent index {p}"))),
        })
        .collect::<Result<Vec<_>>>()?;
    let faces = indices(faces_t)?.chunks_exact(3).map(|f| [f[0], f[1], f[2]]).collect();

    let state_joint_ids = c.get("state_joint_ids").map(indices).transpose()?;
    let head_joint = match c.get("head_joint") {
        Some(t) => {
            let v = indices(t)?;
            if v.len() != 1 {
                return Err(invalid("head_joint must hold one index".into()));
            }
            Some(v[0])
        }
        None => None,
    };
    let vertex_areas = match c.get("vertex_areas") {
        Some(t) => {
            check_dims(t, &[Some(nv)])?;
            Some(floats(t)?)
        }
        None => None,
    };
    Ok(BodyModelParts {
        template_vertices: triples(&floats(tv)?),
        shape_dirs,
        joint_regressor: floats(jr)?,
        parents,
        skin_weights: floats(sw)?,
        faces,
        contact_vertex_ids: indices(contact)?,
        surface_probe_ids: indices(probes)?,
        state_joint_ids,
        head_joint,
        vertex_areas,
    })
}

/// Encodes model parts; floating tensors use f64 payloads.
pub fn parts_to_container(p: &BodyModelParts) -> TensorContainer {
    let nv = p.template_vertices.len() as u64;
    let nj = p.parents.len() as u64;
    let mut c = TensorContainer::new();
    let mut put = |name: &str, dims: Vec<u64>, data: TensorData| {
        c.insert(name, dims, data).expect("model tensors are consistent");
    };
    put(
        "template_vertices",
        vec![nv, 3],
        TensorData::F64(p.template_vertices.iter().flatten().copied().collect()),
    );
    put(
        "shape_dirs",
        vec![p.shape_dirs.len() as u64, nv, 3],
        TensorData::F64(p.shape_dirs.iter().flatten().flatten().copied().collect()),
    );
    put("joint_regressor", vec![nj, nv], TensorData::F64(p.joint_regressor.clone()));
    put(
        "parents",
        vec![nj],
        TensorData::I64(p.parents.iter().map(|q| q.map_or(-1, |v| v as i64)).collect()),
    );
    put("skin_weights", vec![nv, nj], TensorData::F64(p.skin_weights.clone()));
    put(
        "faces",
        vec![p.faces.len() as u64, 3],
        TensorData::I64(p.faces.iter().flatten().map(|&v| v as i64).collect()),
    );
    let ids = |v: &[usize]| TensorData::I64(v.iter().map(|&x| x as i64).collect());
    put("contact_vertex_ids", vec![p.contact_vertex_ids.len() as u64], ids(&p.contact_vertex_ids));
    put("surface_probe_ids", vec![p.surface_probe_ids.len() as u64], ids(&p.surface_probe_ids));
    if let Some(s) = &p.state_joint_ids {
        put("state_joint_ids", vec![s.len() as u64], ids(s));
    }
    if let Some(h) = p.head_joint {
        put("head_joint", vec![1], ids(&[h]));
    }
    if let Some(a) = &p.vertex_areas {
        put("vertex_areas", vec![nv], TensorData::F64(a.clone()));
    }
    c
}

pub fn load_model(path: impl AsRef<Path>) -> Result<BodyModel> {
    BodyModel::new(parts_from_container(&TensorContainer::read(path)?)?)
}

pub fn save_model(path: impl AsRef<Path>, parts: &BodyModelParts) -> Result<()> {
    parts_to_container(parts).write(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::body_model::toy::{toy_model_parts, ToyModelOptions};

    #[test]
    fn parts_round_trip() {
        let p = toy_model_parts(&ToyModelOptions::default());
        let c = parts_to_container(&p);
        assert_eq!(parts_from_container(&c).unwrap(), p);
        let again = parts_to_container(&parts_from_container(&c).unwrap());
        assert_eq!(again.to_bytes(), c.to_bytes());
    }

    #[test]
    fn missing_tensor_is_named() {
        let p = toy_model_parts(&ToyModelOptions::default());
        let full = parts_to_container(&p);
        let mut c = TensorContainer::new();
        for t in full.tensors().iter().filter(|t| t.name != "skin_weights") {
            c.insert(t.name.clone(), t.dims.clone(), t.data.clone()).unwrap();
        }
        match parts_from_container(&c) {
            Err(GraftError::InvalidModel(m)) => assert!(m.contains("skin_weights")),
            other => panic!("{other:?}"),
        }
    }
}
