//! Single-file model checkpoints: an 8-byte magic, a length-prefixed JSON
//! manifest (model spec + entry table with byte offsets), then the
//! concatenated little-endian float32 buffers.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::StandardizationStats;
use crate::error::{Error, Result};
use crate::models::{EntryKind, Model, ModelSpec, StateEntry};
use crate::scalar::Scalar;

const MAGIC: &[u8; 8] = b"MSEGCKP1";

#[derive(Serialize, Deserialize)]
struct ManifestEntry {
    name: String,
    kind: EntryKind,
    shape: Vec<usize>,
    /// Byte offset into the payload.
    offset: u64,
    /// Element count.
    count: u64,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    spec: ModelSpec,
    entries: Vec<ManifestEntry>,
    /// Training-set standardization, kept so prediction on raw rasters can
    /// reuse the exact transform.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    standardization: Option<StandardizationStats>,
}

pub fn save_checkpoint<S: Scalar>(
    model: &mut Model<S>,
    standardization: Option<StandardizationStats>,
    path: impl AsRef<Path>,
) -> Result<()> {
    let state = model.export_state();
    let mut entries = Vec::with_capacity(state.len());
    let mut payload: Vec<u8> = Vec::new();
    for e in &state {
        entries.push(ManifestEntry {
            name: e.name.clone(),
            kind: e.kind,
            shape: e.shape.clone(),
            offset: payload.len() as u64,
            count: e.data.len() as u64,
        });
        for v in &e.data {
            payload.extend_from_slice(&v.to_f32().to_le_bytes());
        }
    }
    let manifest = Manifest {
        spec: *model.spec(),
        entries,
        standardization,
    };
    let json = serde_json::to_vec(&manifest)?;
    let mut file = std::fs::File::create(path)?;
    file.write_all(MAGIC)?;
    file.write_all(&(json.len() as u64).to_le_bytes())?;
    file.write_all(&json)?;
    file.write_all(&payload)?;
    Ok(())
}

pub fn load_checkpoint<S: Scalar>(
    path: impl AsRef<Path>,
) -> Result<(Model<S>, Option<StandardizationStats>)> {
    let path = path.as_ref();
    let bytes = std::fs::read(path)
        .map_err(|e| Error::Format(format!("cannot read checkpoint {}: {e}", path.display())))?;
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(Error::Format(format!(
            "{} is not a model checkpoint",
            path.display()
        )));
    }
    let json_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    if bytes.len() < 16 + json_len {
        return Err(Error::Format("checkpoint manifest truncated".into()));
    }
    let manifest: Manifest = serde_json::from_slice(&bytes[16..16 + json_len])
        .map_err(|e| Error::Format(format!("malformed checkpoint manifest: {e}")))?;
    let payload = &bytes[16 + json_len..];

    let mut entries = Vec::with_capacity(manifest.entries.len());
    for me in &manifest.entries {
        let start = me.offset as usize;
        let end = start + me.count as usize * 4;
        if end > payload.len() {
            return Err(Error::Format(format!(
                "checkpoint entry {} overruns the payload",
                me.name
            )));
        }
        let data: Vec<S> = payload[start..end]
            .chunks_exact(4)
            .map(|b| S::from_f32(f32::from_le_bytes([b[0], b[1], b[2], b[3]])))
            .collect();
        entries.push(StateEntry {
            name: me.name.clone(),
            kind: me.kind,
            shape: me.shape.clone(),
            data,
        });
    }

    let mut model = Model::build(&manifest.spec, 0)?;
    model.import_state(&entries)?;
    Ok((model, manifest.standardization))
}

/// FNV-1a over raw bytes; stable across runs and platforms.
pub fn fingerprint_bytes(bytes: &[u8]) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

/// Fingerprint of a model's current state (parameters and buffers).
pub fn fingerprint_state<S: Scalar>(model: &mut Model<S>) -> u64 {
    let mut bytes = Vec::new();
    for e in model.export_state() {
        bytes.extend_from_slice(e.name.as_bytes());
        for v in &e.data {
            bytes.extend_from_slice(&v.to_f32().to_le_bytes());
        }
    }
    fingerprint_bytes(&bytes)
}
