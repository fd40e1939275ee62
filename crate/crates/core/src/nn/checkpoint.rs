//! Network checkpoint container.
//!
//! Binary file (little-endian):
//!
//! | field | encoding |
//! |---|---|
//! | magic | 4 bytes `NNCK` |
//! | version | u16 |
//! | element width | u8, 4 for f32 and 8 for f64 |
//! | tensor count | u32 |
//! | layer table | per tensor: name length u16, UTF-8 name, rank u8, dims u32 each |
//! | payload | every tensor's elements in table order |
//!
//! A JSON sidecar next to it (`<file>.json`) repeats the shapes and carries
//! the training config hash and free-form metadata.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::NnError;

use super::Scalar;

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"NNCK";
pub const CHECKPOINT_VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor<T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<T>,
}

impl<T> NamedTensor<T> {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, data: Vec<T>) -> Self {
        let t = Self { name: name.into(), shape, data };
        assert_eq!(t.shape.iter().product::<usize>(), t.data.len(), "tensor {} shape", t.name);
        t
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint<T> {
    pub tensors: Vec<NamedTensor<T>>,
    pub config_hash: String,
    pub metadata: serde_json::Value,
}

#[derive(Serialize, Deserialize)]
struct Sidecar {
    format: String,
    version: u16,
    element_bytes: u8,
    config_hash: String,
    tensors: Vec<SidecarTensor>,
    metadata: serde_json::Value,
}

#[derive(Serialize, Deserialize)]
struct SidecarTensor {
    name: String,
    shape: Vec<usize>,
}

fn err(msg: impl Into<String>) -> NnError {
    NnError::Checkpoint(msg.into())
}

impl<T: Scalar> Checkpoint<T> {
    pub fn get(&self, name: &str) -> Result<&NamedTensor<T>, NnError> {
        self.tensors.iter().find(|t| t.name == name).ok_or_else(|| err(format!("missing tensor {name}")))
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.push(T::WIDTH);
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for t in &self.tensors {
            out.extend_from_slice(&(t.name.len() as u16).to_le_bytes());
            out.extend_from_slice(t.name.as_bytes());
            out.push(t.shape.len() as u8);
            for d in &t.shape {
                out.extend_from_slice(&(*d as u32).to_le_bytes());
            }
        }
        for t in &self.tensors {
            for v in &t.data {
                v.to_le(&mut out);
            }
        }
        out
    }

    /// Decodes the binary part; hash and metadata come from the sidecar.
    pub fn decode(data: &[u8]) -> Result<Vec<NamedTensor<T>>, NnError> {
        let mut pos = 0usize;
        let mut take = |n: usize| -> Result<&[u8], NnError> {
            let s = data.get(pos..pos + n).ok_or_else(|| err("truncated checkpoint"))?;
            pos += n;
            Ok(s)
        };
        if take(4)? != CHECKPOINT_MAGIC {
            return Err(err("bad magic, expected NNCK"));
        }
        let version = u16::from_le_bytes(take(2)?.try_into().unwrap());
        if version != CHECKPOINT_VERSION {
            return Err(err(format!("unsupported checkpoint version {version}")));
        }
        let width = take(1)?[0];
        if width != T::WIDTH {
            return Err(err(format!("element width {width} does not match {}", T::WIDTH)));
        }
        let count = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
        let mut table = Vec::with_capacity(count);
        for _ in 0..count {
            let len = u16::from_le_bytes(take(2)?.try_into().unwrap()) as usize;
            let name = String::from_utf8(take(len)?.to_vec()).map_err(|_| err("tensor name is not UTF-8"))?;
            let rank = take(1)?[0] as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize);
            }
            table.push((name, shape));
        }
        let w = T::WIDTH as usize;
        let mut tensors = Vec::with_capacity(count);
        for (name, shape) in table {
            let n: usize = shape.iter().product();
            let bytes = take(n * w)?;
            let data = bytes.chunks_exact(w).map(T::from_le).collect();
            tensors.push(NamedTensor { name, shape, data });
        }
        if pos != data.len() {
            return Err(err("trailing bytes after checkpoint payload"));
        }
        Ok(tensors)
    }
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

pub fn save_checkpoint<T: Scalar>(path: &Path, ckpt: &Checkpoint<T>) -> Result<(), NnError> {
    let io = |e: std::io::Error| err(format!("{}: {e}", path.display()));
    std::fs::write(path, ckpt.encode()).map_err(io)?;
    let sidecar = Sidecar {
        format: "NNCK".into(),
        version: CHECKPOINT_VERSION,
        element_bytes: T::WIDTH,
        config_hash: ckpt.config_hash.clone(),
        tensors: ckpt.tensors.iter().map(|t| SidecarTensor { name: t.name.clone(), shape: t.shape.clone() }).collect(),
        metadata: ckpt.metadata.clone(),
    };
    let text = serde_json::to_string_pretty(&sidecar).expect("sidecar serializes");
    std::fs::write(sidecar_path(path), text).map_err(io)
}

pub fn load_checkpoint<T: Scalar>(path: &Path) -> Result<Checkpoint<T>, NnError> {
    let io = |e: std::io::Error| err(format!("{}: {e}", path.display()));
    let tensors = Checkpoint::<T>::decode(&std::fs::read(path).map_err(io)?)?;
    let side_path = sidecar_path(path);
    let text = std::fs::read_to_string(&side_path).map_err(io)?;
    let side: Sidecar = serde_json::from_str(&text).map_err(|e| err(format!("{}: {e}", side_path.display())))?;
    if side.tensors.len() != tensors.len()
        || side.tensors.iter().zip(&tensors).any(|(s, t)| s.name != t.name || s.shape != t.shape)
    {
        return Err(err("sidecar layer table does not match the binary"));
    }
    Ok(Checkpoint { tensors, config_hash: side.config_hash, metadata: side.metadata })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint<f32> {
        Checkpoint {
            tensors: vec![
                NamedTensor::new("policy.params", vec![2, 3], vec![1.0, -2.5, 3.25, 0.0, 1e-7, -0.0]),
                NamedTensor::new("policy.log_std", vec![2], vec![-0.5, -0.5]),
            ],
            config_hash: "abc123".into(),
            metadata: serde_json::json!({"step": 42}),
        }
    }

    #[test]
    fn binary_layout() {
        let bytes = sample().encode();
        assert_eq!(&bytes[..4], b"NNCK");
        assert_eq!(u16::from_le_bytes([bytes[4], bytes[5]]), 1);
        assert_eq!(bytes[6], 4);
        assert_eq!(u32::from_le_bytes(bytes[7..11].try_into().unwrap()), 2);
        let tail = &bytes[bytes.len() - 4..];
        assert_eq!(f32::from_le_bytes(tail.try_into().unwrap()), -0.5);
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.ckpt");
        let ck = sample();
        save_checkpoint(&path, &ck).unwrap();
        assert!(sidecar_path(&path).exists());
        let back: Checkpoint<f32> = load_checkpoint(&path).unwrap();
        assert_eq!(back, ck);
        assert!(load_checkpoint::<f64>(&path).is_err());
    }

    #[test]
    fn truncated_file_is_rejected() {
        let bytes = sample().encode();
        assert!(Checkpoint::<f32>::decode(&bytes[..bytes.len() - 2]).is_err());
    }
}
