//! Checkpoint file: magic, version, length-prefixed JSON manifest, raw little-endian payload.
//!
//! ```text
//! b"DSTDNNCK" | u32 format_version | u64 manifest_len | manifest JSON | payload
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::ModelConfig;
use super::model::Model;
use crate::error::{Error, Result};
use crate::params::{ParamKind, ParamStore};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"DSTDNNCK";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    #[default]
    F32,
    F64,
}

impl Dtype {
    pub fn width(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub kind: ParamKind,
    pub shape: Vec<usize>,
    pub dtype: Dtype,
    /// Byte offset into the payload.
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub config: ModelConfig,
    pub entries: Vec<ManifestEntry>,
    pub payload_bytes: usize,
    pub payload_sha256: String,
}

pub fn encode_checkpoint(store: &ParamStore, cfg: &ModelConfig, dtype: Dtype) -> Result<Vec<u8>> {
    let mut payload = Vec::with_capacity(store.entries().iter().map(|e| e.value.len()).sum::<usize>() * dtype.width());
    let mut entries = Vec::with_capacity(store.len());
    for e in store.entries() {
        entries.push(ManifestEntry {
            name: e.name.clone(),
            kind: e.kind,
            shape: e.value.shape().to_vec(),
            dtype,
            offset: payload.len(),
        });
        for &v in e.value.data() {
            match dtype {
                Dtype::F32 => payload.extend_from_slice(&(v as f32).to_le_bytes()),
                Dtype::F64 => payload.extend_from_slice(&v.to_le_bytes()),
            }
        }
    }
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        config: cfg.clone(),
        entries,
        payload_bytes: payload.len(),
        payload_sha256: hex_digest(&payload),
    };
    let json = serde_json::to_vec(&manifest)?;
    let mut out = Vec::with_capacity(20 + json.len() + payload.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&payload);
    Ok(out)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<(ParamStore, ModelConfig)> {
    let integrity = |m: &str| Error::Integrity(m.to_string());
    if bytes.len() < 20 || &bytes[..8] != MAGIC {
        return Err(integrity("missing checkpoint header"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(Error::Version { found: version, expected: FORMAT_VERSION });
    }
    let mlen = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
    let body = &bytes[20..];
    if body.len() < mlen {
        return Err(integrity("truncated manifest"));
    }
    let manifest: Manifest = serde_json::from_slice(&body[..mlen])?;
    if manifest.format_version != version {
        return Err(Error::Version { found: manifest.format_version, expected: FORMAT_VERSION });
    }
    let payload = &body[mlen..];
    if payload.len() != manifest.payload_bytes {
        return Err(Error::Integrity(format!(
            "payload has {} bytes, manifest declares {}",
            payload.len(),
            manifest.payload_bytes
        )));
    }
    let declared: usize = manifest.entries.iter().map(|e| e.shape.iter().product::<usize>() * e.dtype.width()).sum();
    if declared != payload.len() {
        return Err(Error::Integrity(format!("entries cover {declared} bytes of a {}-byte payload", payload.len())));
    }
    if hex_digest(payload) != manifest.payload_sha256 {
        return Err(integrity("payload checksum mismatch"));
    }
    let mut store = ParamStore::new();
    for e in &manifest.entries {
        let n: usize = e.shape.iter().product();
        let end = e.offset + n * e.dtype.width();
        if end > payload.len() {
            return Err(Error::Integrity(format!("{} extends past the payload", e.name)));
        }
        let raw = &payload[e.offset..end];
        let data: Vec<f64> = match e.dtype {
            Dtype::F32 => raw.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64).collect(),
            Dtype::F64 => raw.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().unwrap())).collect(),
        };
        if store.find(&e.name).is_some() {
            return Err(Error::Integrity(format!("{} listed twice", e.name)));
        }
        store.add(e.name.clone(), e.kind, Tensor::from_vec(&e.shape, data)?);
    }
    Ok((store, manifest.config))
}

pub fn save_checkpoint(store: &ParamStore, cfg: &ModelConfig, path: &Path, dtype: Dtype) -> Result<()> {
    let bytes = encode_checkpoint(store, cfg, dtype)?;
    let mut f = fs::File::create(path)?;
    f.write_all(&bytes)?;
    Ok(())
}

/// Load a checkpoint and check that it holds every parameter of its configuration.
pub fn load_checkpoint(path: &Path) -> Result<(ParamStore, ModelConfig)> {
    let (store, cfg) = decode_checkpoint(&fs::read(path)?)?;
    Model::from_store(&cfg, store.clone())
        .map_err(|e| Error::Integrity(format!("manifest does not match its configuration: {e}")))?;
    Ok((store, cfg))
}

fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Round every stored value through `f32`, matching what an `f32` checkpoint holds.
pub fn quantize_f32(store: &mut ParamStore) {
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        for v in store.get_mut(id).data_mut() {
            *v = *v as f32 as f64;
        }
    }
}
