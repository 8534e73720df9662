//! The `S4CW` weight container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "S4CW" | version: u16 | meta_len: u32 | meta: UTF-8 JSON | f32 payloads
//! ```
//!
//! The JSON carries the model spec, a `component` tag and the ordered tensor
//! manifest. Payloads are row-major and follow the manifest order.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::ModelSpec;
use crate::error::{Error, Result};
use crate::math::Matrix;

pub const MAGIC: &[u8; 4] = b"S4CW";
pub const VERSION: u16 = 1;
const HEADER_LEN: usize = 4 + 2 + 4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: [usize; 2],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    /// `"target"` or `"draft"`.
    pub component: String,
    pub spec: ModelSpec,
    /// Component-specific settings (the draft configuration for drafts).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub extra: Option<serde_json::Value>,
    pub tensors: Vec<TensorEntry>,
}

pub fn encode(
    component: &str,
    spec: &ModelSpec,
    extra: Option<serde_json::Value>,
    tensors: &[(String, &Matrix)],
) -> Result<Vec<u8>> {
    let meta = Metadata {
        component: component.to_string(),
        spec: spec.clone(),
        extra,
        tensors: tensors
            .iter()
            .map(|(name, t)| TensorEntry { name: name.clone(), shape: [t.rows(), t.cols()] })
            .collect(),
    };
    let json = serde_json::to_vec(&meta).map_err(|e| Error::Format(e.to_string()))?;
    let meta_len = u32::try_from(json.len()).map_err(|_| Error::Format("metadata too large".into()))?;
    let payload: usize = tensors.iter().map(|(_, t)| t.data().len() * 4).sum();
    let mut out = Vec::with_capacity(HEADER_LEN + json.len() + payload);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&meta_len.to_le_bytes());
    out.extend_from_slice(&json);
    for (_, t) in tensors {
        for &v in t.data() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode(bytes: &[u8]) -> Result<(Metadata, Vec<(String, Matrix)>)> {
    if bytes.len() < HEADER_LEN || &bytes[..4] != MAGIC {
        return Err(Error::Format("bad magic".into()));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let meta_len = u32::from_le_bytes(bytes[6..10].try_into().expect("4 bytes")) as usize;
    let meta_end = HEADER_LEN
        .checked_add(meta_len)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| Error::Format("truncated metadata".into()))?;
    let meta: Metadata = serde_json::from_slice(&bytes[HEADER_LEN..meta_end])
        .map_err(|e| Error::Format(format!("metadata: {e}")))?;
    let expected: usize = meta.tensors.iter().map(|t| t.shape[0] * t.shape[1] * 4).sum();
    if bytes.len() != meta_end + expected {
        return Err(Error::Format(format!(
            "file is {} bytes, manifest implies {}",
            bytes.len(),
            meta_end + expected
        )));
    }
    let mut off = meta_end;
    let mut tensors = Vec::with_capacity(meta.tensors.len());
    for entry in &meta.tensors {
        let n = entry.shape[0] * entry.shape[1];
        let data = bytes[off..off + 4 * n]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
            .collect();
        off += 4 * n;
        tensors.push((entry.name.clone(), Matrix::new(entry.shape[0], entry.shape[1], data)?));
    }
    Ok((meta, tensors))
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}
