//! Self-describing binary container for checkpoints, adversarial-example
//! archives, and feature dumps.
//!
//! Layout: `b"BDLB"`, a u32 format version, a u64 header length, a JSON
//! header (kind + arbitrary metadata + tensor index), then raw
//! little-endian tensor data in index order.

use crate::error::{Error, Result};
use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

const MAGIC: &[u8; 4] = b"BDLB";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TensorInfo {
    name: String,
    dtype: String,
    shape: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    kind: String,
    format_version: u32,
    meta: serde_json::Value,
    tensors: Vec<TensorInfo>,
}

#[derive(Debug, Clone)]
pub enum TensorData {
    F32(Vec<f32>),
    U32(Vec<u32>),
    U8(Vec<u8>),
}

impl TensorData {
    fn dtype(&self) -> &'static str {
        match self {
            TensorData::F32(_) => "f32",
            TensorData::U32(_) => "u32",
            TensorData::U8(_) => "u8",
        }
    }

    fn len(&self) -> usize {
        match self {
            TensorData::F32(v) => v.len(),
            TensorData::U32(v) => v.len(),
            TensorData::U8(v) => v.len(),
        }
    }
}

/// An in-memory container; build, save, load, query.
#[derive(Debug, Clone)]
pub struct Container {
    pub kind: String,
    pub meta: serde_json::Value,
    tensors: Vec<(String, Vec<usize>, TensorData)>,
}

impl Container {
    pub fn new(kind: impl Into<String>, meta: serde_json::Value) -> Self {
        Container { kind: kind.into(), meta, tensors: Vec::new() }
    }

    pub fn push_f32(&mut self, name: impl Into<String>, shape: Vec<usize>, data: Vec<f32>) {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        self.tensors.push((name.into(), shape, TensorData::F32(data)));
    }

    pub fn push_u32(&mut self, name: impl Into<String>, shape: Vec<usize>, data: Vec<u32>) {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        self.tensors.push((name.into(), shape, TensorData::U32(data)));
    }

    pub fn push_u8(&mut self, name: impl Into<String>, shape: Vec<usize>, data: Vec<u8>) {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        self.tensors.push((name.into(), shape, TensorData::U8(data)));
    }

    pub fn tensor_names(&self) -> Vec<&str> {
        self.tensors.iter().map(|(n, _, _)| n.as_str()).collect()
    }

    fn find(&self, name: &str) -> Result<&(String, Vec<usize>, TensorData)> {
        self.tensors
            .iter()
            .find(|(n, _, _)| n == name)
            .ok_or_else(|| Error::Format(format!("tensor '{name}' missing from container")))
    }

    pub fn f32(&self, name: &str) -> Result<(&[usize], &[f32])> {
        match self.find(name)? {
            (_, shape, TensorData::F32(v)) => Ok((shape, v)),
            _ => Err(Error::Format(format!("tensor '{name}' is not f32"))),
        }
    }

    pub fn u32(&self, name: &str) -> Result<(&[usize], &[u32])> {
        match self.find(name)? {
            (_, shape, TensorData::U32(v)) => Ok((shape, v)),
            _ => Err(Error::Format(format!("tensor '{name}' is not u32"))),
        }
    }

    pub fn u8(&self, name: &str) -> Result<(&[usize], &[u8])> {
        match self.find(name)? {
            (_, shape, TensorData::U8(v)) => Ok((shape, v)),
            _ => Err(Error::Format(format!("tensor '{name}' is not u8"))),
        }
    }

    /// f32 tensor with a hard shape check.
    pub fn f32_shaped(&self, name: &str, shape: &[usize]) -> Result<&[f32]> {
        let (got, data) = self.f32(name)?;
        if got != shape {
            return Err(Error::mismatch(format!(
                "tensor '{name}' has shape {got:?}, expected {shape:?}"
            )));
        }
        Ok(data)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        let header = Header {
            kind: self.kind.clone(),
            format_version: FORMAT_VERSION,
            meta: self.meta.clone(),
            tensors: self
                .tensors
                .iter()
                .map(|(n, s, d)| TensorInfo { name: n.clone(), dtype: d.dtype().into(), shape: s.clone() })
                .collect(),
        };
        let header_bytes = serde_json::to_vec(&header)?;
        let mut w = BufWriter::new(std::fs::File::create(path)?);
        w.write_all(MAGIC)?;
        w.write_u32::<LittleEndian>(FORMAT_VERSION)?;
        w.write_u64::<LittleEndian>(header_bytes.len() as u64)?;
        w.write_all(&header_bytes)?;
        for (_, _, data) in &self.tensors {
            match data {
                TensorData::F32(v) => {
                    for &x in v {
                        w.write_f32::<LittleEndian>(x)?;
                    }
                }
                TensorData::U32(v) => {
                    for &x in v {
                        w.write_u32::<LittleEndian>(x)?;
                    }
                }
                TensorData::U8(v) => w.write_all(v)?,
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut r = BufReader::new(std::fs::File::open(path).map_err(|e| {
            Error::Format(format!("cannot open container {}: {e}", path.display()))
        })?);
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format(format!("bad magic in {}", path.display())));
        }
        let version = r.read_u32::<LittleEndian>()?;
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!(
                "unsupported container version {version} (expected {FORMAT_VERSION})"
            )));
        }
        let header_len = r.read_u64::<LittleEndian>()? as usize;
        let mut header_bytes = vec![0u8; header_len];
        r.read_exact(&mut header_bytes)?;
        let header: Header = serde_json::from_slice(&header_bytes)?;

        let mut tensors = Vec::with_capacity(header.tensors.len());
        for info in header.tensors {
            let count: usize = info.shape.iter().product();
            let data = match info.dtype.as_str() {
                "f32" => {
                    let mut v = vec![0f32; count];
                    r.read_f32_into::<LittleEndian>(&mut v)?;
                    TensorData::F32(v)
                }
                "u32" => {
                    let mut v = vec![0u32; count];
                    r.read_u32_into::<LittleEndian>(&mut v)?;
                    TensorData::U32(v)
                }
                "u8" => {
                    let mut v = vec![0u8; count];
                    r.read_exact(&mut v)?;
                    TensorData::U8(v)
                }
                other => return Err(Error::Format(format!("unknown dtype '{other}'"))),
            };
            if data.len() != count {
                return Err(Error::Format(format!("tensor '{}' length mismatch", info.name)));
            }
            tensors.push((info.name, info.shape, data));
        }
        Ok(Container { kind: header.kind, meta: header.meta, tensors })
    }

    /// Reject containers whose kind differs from what the caller expects.
    pub fn expect_kind(&self, kind: &str) -> Result<()> {
        if self.kind != kind {
            return Err(Error::mismatch(format!(
                "container kind '{}', expected '{kind}'",
                self.kind
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_preserves_everything() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.bdlb");
        let mut c = Container::new("test", serde_json::json!({"alpha": 3}));
        c.push_f32("a", vec![2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.5, -6.25]);
        c.push_u32("b", vec![2], vec![7, 9]);
        c.push_u8("c", vec![3], vec![1, 2, 3]);
        c.save(&path).unwrap();

        let back = Container::load(&path).unwrap();
        assert_eq!(back.kind, "test");
        assert_eq!(back.meta["alpha"], 3);
        let (shape, data) = back.f32("a").unwrap();
        assert_eq!(shape, &[2, 3]);
        assert_eq!(data, &[1.0, 2.0, 3.0, 4.0, 5.5, -6.25]);
        assert_eq!(back.u32("b").unwrap().1, &[7, 9]);
        assert_eq!(back.u8("c").unwrap().1, &[1, 2, 3]);
        assert!(back.f32("missing").is_err());
        assert!(back.f32_shaped("a", &[3, 2]).is_err());
        assert!(back.expect_kind("other").is_err());
    }

    #[test]
    fn corrupt_magic_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.bdlb");
        std::fs::write(&path, b"NOPE....").unwrap();
        assert!(Container::load(&path).is_err());
    }
}
