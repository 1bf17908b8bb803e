//! Versioned little-endian tensor checkpoint: magic `ADCT`, u32 version,
//! u32 tensor count, then per tensor the u32 name length, UTF-8 name, u8
//! dtype, u32 rank, u32 dims and raw values.

use std::io::{Read, Write};

use indexmap::IndexMap;

use crate::error::{Result, TensorError};
use crate::real::{DType, Real};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"ADCT";
pub const VERSION: u32 = 1;

/// Tensors loaded from a checkpoint, widened to f64 (exact for f32 data).
#[derive(Debug, Clone, Default)]
pub struct Checkpoint {
    pub tensors: IndexMap<String, (DType, Tensor<f64>)>,
}

impl Checkpoint {
    pub fn get<T: Real>(&self, name: &str) -> Result<Tensor<T>> {
        self.tensors
            .get(name)
            .map(|(_, t)| t.cast())
            .ok_or_else(|| TensorError::Checkpoint(format!("missing tensor {name}")))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }
}

/// Writes tensors in the given order.
pub struct CheckpointWriter {
    entries: Vec<(String, DType, Vec<usize>, Vec<u8>)>,
}

impl Default for CheckpointWriter {
    fn default() -> Self {
        Self::new()
    }
}

impl CheckpointWriter {
    pub fn new() -> Self {
        Self { entries: Vec::new() }
    }

    pub fn add<T: Real>(&mut self, name: &str, t: &Tensor<T>) {
        self.add_as(name, t, T::DTYPE);
    }

    /// Store `t` with an explicit element type (e.g. f32 regardless of `T`).
    pub fn add_as<T: Real>(&mut self, name: &str, t: &Tensor<T>, dtype: DType) {
        let mut raw = Vec::with_capacity(t.len() * dtype.size());
        for &v in t.data() {
            match dtype {
                DType::F32 => raw.extend_from_slice(&(v.f64() as f32).to_le_bytes()),
                DType::F64 => raw.extend_from_slice(&v.f64().to_le_bytes()),
            }
        }
        self.entries
            .push((name.to_string(), dtype, t.shape().to_vec(), raw));
    }

    pub fn write<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(self.entries.len() as u32).to_le_bytes())?;
        for (name, dtype, shape, raw) in &self.entries {
            w.write_all(&(name.len() as u32).to_le_bytes())?;
            w.write_all(name.as_bytes())?;
            w.write_all(&[*dtype as u8])?;
            w.write_all(&(shape.len() as u32).to_le_bytes())?;
            for &d in shape {
                w.write_all(&(d as u32).to_le_bytes())?;
            }
            w.write_all(raw)?;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write(&mut out).expect("writing to a Vec cannot fail");
        out
    }
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)
        .map_err(|e| TensorError::Checkpoint(format!("truncated: {e}")))?;
    Ok(u32::from_le_bytes(b))
}

pub fn read_checkpoint<R: Read>(r: &mut R) -> Result<Checkpoint> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|e| TensorError::Checkpoint(format!("truncated: {e}")))?;
    if &magic != MAGIC {
        return Err(TensorError::Checkpoint("bad magic".into()));
    }
    let version = read_u32(r)?;
    if version != VERSION {
        return Err(TensorError::Checkpoint(format!(
            "unsupported version {version}"
        )));
    }
    let count = read_u32(r)?;
    let mut tensors = IndexMap::new();
    for _ in 0..count {
        let nlen = read_u32(r)? as usize;
        if nlen > 1 << 16 {
            return Err(TensorError::Checkpoint("name too long".into()));
        }
        let mut name = vec![0u8; nlen];
        r.read_exact(&mut name)
            .map_err(|e| TensorError::Checkpoint(format!("truncated: {e}")))?;
        let name = String::from_utf8(name)
            .map_err(|_| TensorError::Checkpoint("name is not UTF-8".into()))?;
        let mut tag = [0u8; 1];
        r.read_exact(&mut tag)
            .map_err(|e| TensorError::Checkpoint(format!("truncated: {e}")))?;
        let dtype = DType::from_u8(tag[0])
            .ok_or_else(|| TensorError::Checkpoint(format!("unknown dtype {}", tag[0])))?;
        let rank = read_u32(r)? as usize;
        if rank > 8 {
            return Err(TensorError::Checkpoint(format!("rank {rank} too large")));
        }
        let shape = (0..rank)
            .map(|_| read_u32(r).map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let mut raw = vec![0u8; n * dtype.size()];
        r.read_exact(&mut raw)
            .map_err(|e| TensorError::Checkpoint(format!("truncated: {e}")))?;
        let data = match dtype {
            DType::F32 => raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
                .collect(),
            DType::F64 => raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect(),
        };
        tensors.insert(name, (dtype, Tensor::new(shape, data)?));
    }
    Ok(Checkpoint { tensors })
}
