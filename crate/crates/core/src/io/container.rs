//! Named-tensor binary archive.
//!
//! Layout (all little-endian): magic `GRFT`, `u32` version, `u32` tensor
//! count, then per tensor a `u16` name length, UTF-8 name, `u8` dtype
//! (0 = f32, 1 = f64, 2 = i64), `u8` rank, `u64` dims and the raw payload.

use std::path::Path;

use crate::error::{GraftError, Result};

pub const MAGIC: &[u8; 4] = b"GRFT";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    F64(Vec<f64>),
    I64(Vec<i64>),
}

impl TensorData {
    pub fn len(&self) -> usize {
        match self {
            TensorData::F32(v) => v.len(),
            TensorData::F64(v) => v.len(),
            TensorData::I64(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn dtype(&self) -> u8 {
        match self {
            TensorData::F32(_) => 0,
            TensorData::F64(_) => 1,
            TensorData::I64(_) => 2,
        }
    }

    /// Floating payload widened to f64; integers are rejected.
    pub fn to_f64(&self) -> Result<Vec<f64>> {
        match self {
            TensorData::F32(v) => Ok(v.iter().map(|&x| x as f64).collect()),
            TensorData::F64(v) => Ok(v.clone()),
            TensorData::I64(_) => Err(GraftError::Container("expected a floating-point tensor".into())),
        }
    }

    pub fn as_i64(&self) -> Result<&[i64]> {
        match self {
            TensorData::I64(v) => Ok(v),
            _ => Err(GraftError::Container("expected an i64 tensor".into())),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub dims: Vec<u64>,
    pub data: TensorData,
}

impl Tensor {
    pub fn numel(&self) -> usize {
        self.dims.iter().product::<u64>() as usize
    }
}

/// Ordered collection of uniquely named tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TensorContainer {
    tensors: Vec<Tensor>,
}

impl TensorContainer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, dims: Vec<u64>, data: TensorData) -> Result<()> {
        let name = name.into();
        if self.get(&name).is_some() {
            return Err(GraftError::Container(format!("duplicate tensor {name:?}")));
        }
        if name.len() > u16::MAX as usize {
            return Err(GraftError::Container("tensor name too long".into()));
        }
        if dims.len() > u8::MAX as usize {
            return Err(GraftError::Container(format!("tensor {name:?} has too many dims")));
        }
        let t = Tensor { name, dims, data };
        if t.numel() != t.data.len() {
            return Err(GraftError::Container(format!(
                "tensor {:?}: dims {:?} need {} values, got {}",
                t.name,
                t.dims,
                t.numel(),
                t.data.len()
            )));
        }
        self.tensors.push(t);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn require(&self, name: &str) -> Result<&Tensor> {
        self.get(name)
            .ok_or_else(|| GraftError::Container(format!("missing tensor {name:?}")))
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for t in &self.tensors {
            out.extend_from_slice(&(t.name.len() as u16).to_le_bytes());
            out.extend_from_slice(t.name.as_bytes());
            out.push(t.data.dtype());
            out.push(t.dims.len() as u8);
            for d in &t.dims {
                out.extend_from_slice(&d.to_le_bytes());
            }
            match &t.data {
                TensorData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
                TensorData::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
                TensorData::I64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(GraftError::Container("bad magic".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(GraftError::Container(format!("unsupported version {version}")));
        }
        let count = r.u32()?;
        let mut c = TensorContainer::new();
        for _ in 0..count {
            let name_len = r.u16()? as usize;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| GraftError::Container("tensor name is not UTF-8".into()))?
                .to_owned();
            let dtype = r.u8()?;
            let rank = r.u8()? as usize;
            let dims = (0..rank).map(|_| r.u64()).collect::<Result<Vec<u64>>>()?;
            let numel = dims
                .iter()
                .try_fold(1u64, |a, &d| a.checked_mul(d))
                .and_then(|n| usize::try_from(n).ok())
                .ok_or_else(|| GraftError::Container(format!("tensor {name:?} is too large")))?;
            let data = match dtype {
                0 => TensorData::F32(r.chunks(numel, 4, |b| f32::from_le_bytes(b.try_into().unwrap()))?),
                1 => TensorData::F64(r.chunks(numel, 8, |b| f64::from_le_bytes(b.try_into().unwrap()))?),
                2 => TensorData::I64(r.chunks(numel, 8, |b| i64::from_le_bytes(b.try_into().unwrap()))?),
                other => return Err(GraftError::Container(format!("unknown dtype {other} for {name:?}"))),
            };
            c.insert(name, dims, data)?;
        }
        if r.pos != bytes.len() {
            return Err(GraftError::Container(format!(
                "{} trailing bytes after last tensor",
                bytes.len() - r.pos
            )));
        }
        Ok(c)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| GraftError::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| GraftError::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| GraftError::Container("unexpected end of data".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn chunks<T>(&mut self, n: usize, width: usize, f: impl Fn(&[u8]) -> T) -> Result<Vec<T>> {
        let total = n
            .checked_mul(width)
            .ok_or_else(|| GraftError::Container("payload size overflow".into()))?;
        Ok(self.take(total)?.chunks_exact(width).map(f).collect())
    }
}
