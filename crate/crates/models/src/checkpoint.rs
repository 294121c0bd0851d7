//! Self-describing checkpoint files.
//!
//! Byte layout, all integers little-endian:
//!
//! | offset | size | content |
//! |---|---|---|
//! | 0 | 8 | magic `MMCKPT\0\x01` |
//! | 8 | 8 | manifest length `m` (u64) |
//! | 16 | m | UTF-8 JSON [`Manifest`] |
//! | 16 + m | 8 · n | payload: every tensor as f64, in manifest order |
//!
//! Each tensor entry gives its name, shape and element offset into the
//! payload. `payload_sha256` is the hex digest of the payload bytes.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use matmodal_nn::{ParamStore, Tensor};

use crate::config::TrainConfig;
use crate::data::{FeaturizeConfig, Standardization};
use crate::model::{Model, ModelSpec};
use crate::{ModelError, Result};

pub const MAGIC: [u8; 8] = *b"MMCKPT\0\x01";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// In f64 elements from the start of the payload.
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format_version: u32,
    pub spec: ModelSpec,
    pub stats: Standardization,
    /// Root seed of the run that produced the parameters.
    pub seed: u64,
    #[serde(default)]
    pub train_config: Option<TrainConfig>,
    #[serde(default)]
    pub featurize: Option<FeaturizeConfig>,
    pub tensors: Vec<TensorEntry>,
    pub payload_sha256: String,
}

/// A trained model plus the settings that produced it.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: Model,
    pub seed: u64,
    pub train_config: Option<TrainConfig>,
    pub featurize: Option<FeaturizeConfig>,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Serialized form of `ckpt`.
pub fn encode_checkpoint(ckpt: &Checkpoint) -> Result<Vec<u8>> {
    let store = &ckpt.model.store;
    let mut tensors = Vec::with_capacity(store.len());
    let mut payload = Vec::with_capacity(store.n_values() * 8);
    let mut offset = 0;
    for (_, p) in store.iter() {
        tensors.push(TensorEntry {
            name: p.name.clone(),
            shape: p.value.shape().to_vec(),
            offset,
        });
        offset += p.value.len();
        for v in p.value.data() {
            payload.extend_from_slice(&v.to_le_bytes());
        }
    }
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        spec: ckpt.model.spec.clone(),
        stats: ckpt.model.stats.clone(),
        seed: ckpt.seed,
        train_config: ckpt.train_config.clone(),
        featurize: ckpt.featurize,
        tensors,
        payload_sha256: hex(&Sha256::digest(&payload)),
    };
    let json =
        serde_json::to_vec(&manifest).map_err(|e| ModelError::Data(format!("manifest: {e}")))?;
    let mut out = Vec::with_capacity(16 + json.len() + payload.len());
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&payload);
    Ok(out)
}

/// Parses bytes produced by [`encode_checkpoint`]; `path` is only used in
/// error messages.
pub fn decode_checkpoint(bytes: &[u8], path: &Path) -> Result<Checkpoint> {
    let bad = |m: String| ModelError::checkpoint(path, m);
    if bytes.len() < 16 || bytes[..8] != MAGIC {
        return Err(bad("not a checkpoint file (bad magic)".into()));
    }
    let m = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let json = bytes
        .get(16..16usize.saturating_add(m))
        .ok_or_else(|| bad(format!("truncated manifest ({m} bytes declared)")))?;
    // Check the version before the full schema so old files get a clear error.
    let version = serde_json::from_slice::<serde_json::Value>(json)
        .map_err(|e| bad(format!("manifest is not JSON: {e}")))?
        .get("format_version")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| bad("manifest has no format_version".into()))?;
    if version != FORMAT_VERSION as u64 {
        return Err(ModelError::Version {
            path: path.to_path_buf(),
            found: version.min(u32::MAX as u64) as u32,
            expected: FORMAT_VERSION,
        });
    }
    let manifest: Manifest =
        serde_json::from_slice(json).map_err(|e| bad(format!("manifest: {e}")))?;
    let payload = &bytes[16 + m..];
    if hex(&Sha256::digest(payload)) != manifest.payload_sha256 {
        return Err(bad("payload checksum mismatch (file corrupted)".into()));
    }
    if !payload.len().is_multiple_of(8) {
        return Err(bad(format!(
            "payload of {} bytes is not whole f64s",
            payload.len()
        )));
    }
    let values: Vec<f64> = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    let mut store = ParamStore::new();
    for t in &manifest.tensors {
        let len: usize = t.shape.iter().product();
        let data = values
            .get(t.offset..t.offset + len)
            .ok_or_else(|| bad(format!("tensor {} runs past the payload", t.name)))?;
        store.insert(&t.name, Tensor::new(t.shape.clone(), data.to_vec())?)?;
    }
    let model = Model::from_parts(manifest.spec, manifest.stats, store)
        .map_err(|e| bad(format!("parameters do not fit the model spec: {e}")))?;
    Ok(Checkpoint {
        model,
        seed: manifest.seed,
        train_config: manifest.train_config,
        featurize: manifest.featurize,
    })
}

/// Writes to a temporary sibling, then renames over `path`.
pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    let bytes = encode_checkpoint(ckpt)?;
    let tmp = path.with_extension("tmp");
    let mut f = fs::File::create(&tmp).map_err(|e| ModelError::io(&tmp, e))?;
    f.write_all(&bytes).map_err(|e| ModelError::io(&tmp, e))?;
    f.sync_all().map_err(|e| ModelError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| ModelError::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| ModelError::io(path, e))?;
    decode_checkpoint(&bytes, path)
}
