//! Binary checkpoint container.
//!
//! Layout:
//!
//! ```text
//! magic      8 bytes  "FGCKPT\0\0"
//! version    u32 LE
//! header_len u64 LE
//! header     UTF-8 JSON {version, config, manifest: [{name, kind, shape, offset}]}
//! data       little-endian f32 arrays in manifest order
//! ```
//!
//! Offsets are byte offsets from the start of the data section.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ParamStore, Tensor};
use crate::error::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"FGCKPT\0\0";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EntryKind {
    Param,
    Buffer,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub kind: EntryKind,
    pub shape: Vec<usize>,
    pub offset: u64,
}

#[derive(Serialize, Deserialize)]
struct Header {
    version: u32,
    config: serde_json::Value,
    manifest: Vec<ManifestEntry>,
}

pub struct Checkpoint {
    pub version: u32,
    pub config: serde_json::Value,
    pub manifest: Vec<ManifestEntry>,
    pub store: ParamStore,
}

pub fn encode_checkpoint(config: &serde_json::Value, store: &ParamStore) -> Vec<u8> {
    let mut manifest = Vec::new();
    let mut data = Vec::new();
    let entries = store
        .params()
        .map(|(n, p)| (n, EntryKind::Param, &p.value))
        .chain(store.buffers().map(|(n, t)| (n, EntryKind::Buffer, t)));
    for (name, kind, tensor) in entries {
        manifest.push(ManifestEntry {
            name: name.to_string(),
            kind,
            shape: tensor.shape().to_vec(),
            offset: data.len() as u64,
        });
        for &v in tensor.data() {
            data.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    let header = Header {
        version: CHECKPOINT_VERSION,
        config: config.clone(),
        manifest,
    };
    let header = serde_json::to_vec(&header).expect("checkpoint header serializes");
    let mut out = Vec::with_capacity(20 + header.len() + data.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(&data);
    out
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let bad = |msg: &str| Error::parse("checkpoint", msg);
    if bytes.len() < 20 || &bytes[..8] != MAGIC {
        return Err(bad("missing magic bytes"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(bad(&format!("unsupported format version {version}")));
    }
    let header_len = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
    let data_start = 20usize
        .checked_add(header_len)
        .filter(|&end| end <= bytes.len())
        .ok_or_else(|| bad("truncated header"))?;
    let header: Header = serde_json::from_slice(&bytes[20..data_start]).map_err(|e| Error::parse("checkpoint header", e))?;
    let data = &bytes[data_start..];
    let mut store = ParamStore::new();
    for entry in &header.manifest {
        let numel: usize = entry.shape.iter().product();
        let start = entry.offset as usize;
        let end = start + numel * 4;
        if end > data.len() {
            return Err(bad(&format!("entry {} extends past end of data", entry.name)));
        }
        let values = data[start..end]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        let tensor = Tensor::new(entry.shape.clone(), values)?;
        match entry.kind {
            EntryKind::Param => store.insert(entry.name.clone(), tensor)?,
            EntryKind::Buffer => store.insert_buffer(entry.name.clone(), tensor)?,
        }
    }
    Ok(Checkpoint {
        version,
        config: header.config,
        manifest: header.manifest,
        store,
    })
}

pub fn write_checkpoint(path: &Path, config: &serde_json::Value, store: &ParamStore) -> Result<()> {
    fs::write(path, encode_checkpoint(config, store)).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}
