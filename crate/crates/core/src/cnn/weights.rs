//! Portable weight format: a JSON manifest plus a blob of little-endian f32
//! values in manifest order, guarded by a CRC32 of the blob.

use serde::{Deserialize, Serialize};

use super::network::{build_network, NetworkKind, NetworkModel};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Byte offset into the blob.
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WeightManifest {
    pub kind: NetworkKind,
    pub in_channels: usize,
    pub dtype: String,
    pub params: Vec<ParamEntry>,
    /// CRC32 of the blob.
    pub checksum: u32,
}

pub fn save_weights(model: &NetworkModel) -> (Vec<u8>, WeightManifest) {
    let mut blob = Vec::with_capacity(model.parameter_count() * 4);
    let mut params = Vec::new();
    for p in model.params() {
        params.push(ParamEntry {
            name: p.name,
            shape: p.shape,
            offset: blob.len(),
        });
        for v in p.data {
            blob.extend_from_slice(&v.to_le_bytes());
        }
    }
    let manifest = WeightManifest {
        kind: model.kind(),
        in_channels: model.in_channels(),
        dtype: "f32".into(),
        params,
        checksum: crc32fast::hash(&blob),
    };
    (blob, manifest)
}

/// Rebuilds a `kind` network from a manifest and blob, checking the kind,
/// checksum, and every parameter name, shape and offset.
pub fn load_weights(kind: NetworkKind, manifest: &WeightManifest, blob: &[u8]) -> Result<NetworkModel> {
    if manifest.kind != kind {
        return Err(Error::KindMismatch {
            expected: kind.to_string(),
            found: manifest.kind.to_string(),
        });
    }
    if manifest.dtype != "f32" {
        return Err(Error::CorruptWeights(format!("unsupported dtype {}", manifest.dtype)));
    }
    let mut model = build_network(kind, manifest.in_channels)?;
    let expected_bytes = model.parameter_count() * 4;
    if blob.len() != expected_bytes {
        return Err(Error::CorruptWeights(format!(
            "blob holds {} bytes, {kind} with {} input channels needs {expected_bytes}",
            blob.len(),
            manifest.in_channels
        )));
    }
    let crc = crc32fast::hash(blob);
    if crc != manifest.checksum {
        return Err(Error::CorruptWeights(format!(
            "checksum {crc:#010x} does not match manifest {:#010x}",
            manifest.checksum
        )));
    }
    let params = model.params_mut();
    if params.len() != manifest.params.len() {
        return Err(Error::CorruptWeights(format!(
            "manifest lists {} parameters, network has {}",
            manifest.params.len(),
            params.len()
        )));
    }
    let mut offset = 0;
    for (p, entry) in params.into_iter().zip(&manifest.params) {
        if p.name != entry.name || p.shape != entry.shape || entry.offset != offset {
            return Err(Error::CorruptWeights(format!(
                "manifest entry {} {:?} @{} does not match expected {} {:?} @{offset}",
                entry.name, entry.shape, entry.offset, p.name, p.shape
            )));
        }
        let bytes = &blob[offset..offset + p.data.len() * 4];
        for (v, b) in p.data.iter_mut().zip(bytes.chunks_exact(4)) {
            *v = f32::from_le_bytes([b[0], b[1], b[2], b[3]]);
        }
        offset += bytes.len();
    }
    Ok(model)
}
