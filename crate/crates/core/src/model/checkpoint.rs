//! Binary checkpoint: magic, format version, JSON manifest, little-endian
//! tensor blob and a SHA-256 trailer over everything before it.
//!
//! ```text
//! "QECKPT\0\0" | u32 version | u64 manifest_len | manifest | blob | sha256
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{HeadMode, ModelConfig, QeModel};
use crate::compress::CompressionPlan;
use crate::corpus::{NormStats, QualityThreshold, Vocab};
use crate::error::{QeError, Result};
use crate::tensor::{Precision, Real};

pub const FORMAT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"QECKPT\0\0";
const HEADER_LEN: usize = 8 + 4 + 8;
const DIGEST_LEN: usize = 32;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: Precision,
    /// Byte offset within the blob.
    pub offset: usize,
    pub nbytes: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub dtype: Precision,
    pub config: ModelConfig,
    pub vocab: Vocab,
    pub norm_stats: NormStats,
    pub label_threshold: Option<QualityThreshold>,
    pub retention: Option<Vec<usize>>,
    pub provenance: Vec<CompressionPlan>,
    pub tensors: Vec<TensorEntry>,
}

impl Manifest {
    fn blob_len(&self) -> usize {
        self.tensors.iter().map(|t| t.nbytes).sum()
    }
}

pub fn to_bytes<T: Real>(model: &QeModel<T>) -> Result<Vec<u8>> {
    let width = T::PRECISION.byte_width();
    let mut blob = Vec::new();
    let mut tensors = Vec::new();
    for (name, t) in model.param_names().into_iter().zip(model.params()) {
        let offset = blob.len();
        for &v in t.data() {
            v.write_le(&mut blob);
        }
        tensors.push(TensorEntry {
            name,
            shape: t.shape().to_vec(),
            dtype: T::PRECISION,
            offset,
            nbytes: t.numel() * width,
        });
    }
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        dtype: T::PRECISION,
        config: model.config.clone(),
        vocab: model.vocab.clone(),
        norm_stats: model.norm_stats.clone(),
        label_threshold: model.label_threshold,
        retention: model.retention.clone(),
        provenance: model.provenance.clone(),
        tensors,
    };
    let json = serde_json::to_vec(&manifest)?;
    let mut out = Vec::with_capacity(HEADER_LEN + json.len() + blob.len() + DIGEST_LEN);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&blob);
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    Ok(out)
}

/// Writes to a sibling temporary file, then renames it into place.
pub fn save_checkpoint<T: Real>(model: &QeModel<T>, path: &Path) -> Result<()> {
    crate::write_atomic(path, &to_bytes(model)?)
}

fn checksum_ok(bytes: &[u8]) -> bool {
    let body = bytes.len() - DIGEST_LEN;
    Sha256::digest(&bytes[..body]).as_slice() == &bytes[body..]
}

/// Validates framing and checksum and returns the manifest plus the blob.
pub fn parse_checkpoint<'b>(bytes: &'b [u8], path: &Path) -> Result<(Manifest, &'b [u8])> {
    let min = HEADER_LEN + DIGEST_LEN;
    if bytes.len() < min {
        return Err(QeError::Truncated {
            path: path.into(),
            len: bytes.len(),
            expected: min,
        });
    }
    if &bytes[..8] != MAGIC {
        return Err(QeError::Checkpoint {
            path: path.into(),
            msg: "not a checkpoint file (bad magic)".into(),
        });
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(QeError::Version {
            path: path.into(),
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let manifest_len = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
    let manifest_end = HEADER_LEN.saturating_add(manifest_len);
    if manifest_end.saturating_add(DIGEST_LEN) > bytes.len() {
        return Err(QeError::Truncated {
            path: path.into(),
            len: bytes.len(),
            expected: manifest_end + DIGEST_LEN,
        });
    }
    let manifest: Manifest = match serde_json::from_slice(&bytes[HEADER_LEN..manifest_end]) {
        Ok(m) => m,
        Err(e) => {
            if !checksum_ok(bytes) {
                return Err(QeError::Checksum { path: path.into() });
            }
            return Err(QeError::Checkpoint {
                path: path.into(),
                msg: format!("unreadable manifest: {e}"),
            });
        }
    };
    let expected = manifest_end + manifest.blob_len() + DIGEST_LEN;
    if bytes.len() < expected {
        return Err(QeError::Truncated {
            path: path.into(),
            len: bytes.len(),
            expected,
        });
    }
    if bytes.len() > expected || !checksum_ok(bytes) {
        return Err(QeError::Checksum { path: path.into() });
    }
    Ok((manifest, &bytes[manifest_end..expected - DIGEST_LEN]))
}

pub fn read_manifest(path: &Path) -> Result<Manifest> {
    let bytes = fs::read(path).map_err(|e| QeError::io(path, e))?;
    Ok(parse_checkpoint(&bytes, path)?.0)
}

pub fn from_bytes<T: Real>(bytes: &[u8], path: &Path) -> Result<QeModel<T>> {
    let (manifest, blob) = parse_checkpoint(bytes, path)?;
    let bad = |msg: String| QeError::Checkpoint {
        path: path.into(),
        msg,
    };
    if manifest.dtype != T::PRECISION {
        return Err(bad(format!(
            "stored as {} but loaded as {}",
            manifest.dtype.as_str(),
            T::PRECISION.as_str()
        )));
    }
    let mut model = QeModel::<T>::new(manifest.config.clone(), manifest.vocab.clone())
        .map_err(|e| bad(format!("invalid stored config: {e}")))?;
    let names = model.param_names();
    if names.len() != manifest.tensors.len() {
        return Err(bad(format!(
            "{} tensors stored, {} expected",
            manifest.tensors.len(),
            names.len()
        )));
    }
    let width = T::PRECISION.byte_width();
    for ((entry, name), t) in manifest.tensors.iter().zip(&names).zip(model.params_mut()) {
        if &entry.name != name || entry.shape != t.shape() || entry.nbytes != t.numel() * width {
            return Err(bad(format!("tensor `{}` does not match the model layout", entry.name)));
        }
        let raw = blob
            .get(entry.offset..entry.offset + entry.nbytes)
            .ok_or_else(|| bad(format!("tensor `{}` lies outside the blob", entry.name)))?;
        for (dst, chunk) in t.data_mut().iter_mut().zip(raw.chunks_exact(width)) {
            *dst = T::read_le(chunk);
        }
    }
    model.norm_stats = manifest.norm_stats;
    model.label_threshold = manifest.label_threshold;
    model.retention = manifest.retention;
    model.provenance = manifest.provenance;
    Ok(model)
}

pub fn load_checkpoint<T: Real>(path: &Path) -> Result<QeModel<T>> {
    let bytes = fs::read(path).map_err(|e| QeError::io(path, e))?;
    from_bytes(&bytes, path)
}

/// Like [`load_checkpoint`], but refuses a model trained for another head mode.
pub fn load_checkpoint_for<T: Real>(path: &Path, mode: HeadMode) -> Result<QeModel<T>> {
    let model = load_checkpoint::<T>(path)?;
    if model.mode() != mode {
        return Err(QeError::ModeMismatch {
            found: model.mode().as_str().into(),
            expected: mode.as_str().into(),
        });
    }
    Ok(model)
}
