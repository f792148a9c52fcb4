//! Checkpoints: `step_<N>/manifest.json` describing every tensor plus one
//! flat little-endian `tensors.bin`. The manifest carries a SHA-256 of the
//! blob; any disagreement between the two is an integrity error.

use crate::error::{EtherError, Result};
use crate::nn::params::{ParamSnapshot, ParameterStore};
use candle_core::{DType, Device, Tensor};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

pub const FORMAT_VERSION: u32 = 1;
const MANIFEST: &str = "manifest.json";
const BLOB: &str = "tensors.bin";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorEntry {
    pub name: String,
    pub dtype: String,
    pub shape: Vec<usize>,
    /// Byte offset into the blob.
    pub offset: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format_version: u32,
    pub step: u64,
    /// Parameter-store version at save time.
    pub version: u64,
    pub sha256: String,
    pub blob_bytes: u64,
    pub tensors: Vec<TensorEntry>,
}

#[derive(Debug, Clone)]
pub struct LoadedCheckpoint {
    pub step: u64,
    pub manifest: Manifest,
    pub snapshot: ParamSnapshot,
}

fn dtype_name(dtype: DType) -> Result<&'static str> {
    match dtype {
        DType::F32 => Ok("f32"),
        DType::F64 => Ok("f64"),
        other => Err(EtherError::Usage(format!("checkpoints store f32 or f64 tensors, not {other:?}"))),
    }
}

fn width(name: &str) -> Result<usize> {
    match name {
        "f32" => Ok(4),
        "f64" => Ok(8),
        other => Err(EtherError::Integrity(format!("unknown dtype `{other}`"))),
    }
}

pub fn step_dir(root: &Path, step: u64) -> PathBuf {
    root.join(format!("step_{step}"))
}

/// Write the store under `root/step_<step>`, replacing any earlier copy of
/// that step. The directory is renamed into place only once complete.
pub fn save_checkpoint(root: &Path, step: u64, store: &ParameterStore) -> Result<PathBuf> {
    let snap = store.snapshot()?;
    let mut blob = Vec::new();
    let mut tensors = Vec::with_capacity(snap.tensors.len());
    for (name, t) in &snap.tensors {
        let dtype = dtype_name(t.dtype())?;
        let offset = blob.len() as u64;
        let flat = t.flatten_all()?;
        match t.dtype() {
            DType::F32 => flat.to_vec1::<f32>()?.iter().for_each(|v| blob.extend_from_slice(&v.to_le_bytes())),
            _ => flat.to_vec1::<f64>()?.iter().for_each(|v| blob.extend_from_slice(&v.to_le_bytes())),
        }
        tensors.push(TensorEntry {
            name: name.clone(),
            dtype: dtype.to_string(),
            shape: t.dims().to_vec(),
            offset,
        });
    }
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        step,
        version: snap.version,
        sha256: hex::encode(Sha256::digest(&blob)),
        blob_bytes: blob.len() as u64,
        tensors,
    };
    std::fs::create_dir_all(root)?;
    let tmp = root.join(format!(".step_{step}.partial"));
    if tmp.exists() {
        std::fs::remove_dir_all(&tmp)?;
    }
    std::fs::create_dir_all(&tmp)?;
    std::fs::write(tmp.join(BLOB), &blob)?;
    std::fs::write(tmp.join(MANIFEST), serde_json::to_vec_pretty(&manifest)?)?;
    let dest = step_dir(root, step);
    if dest.exists() {
        std::fs::remove_dir_all(&dest)?;
    }
    std::fs::rename(&tmp, &dest)?;
    Ok(dest)
}

/// Steps with a checkpoint directory under `root`, ascending.
pub fn list_checkpoints(root: &Path) -> Result<Vec<u64>> {
    if !root.exists() {
        return Ok(Vec::new());
    }
    let mut steps = Vec::new();
    for entry in std::fs::read_dir(root)? {
        let entry = entry?;
        let name = entry.file_name();
        if let Some(step) = name.to_str().and_then(|n| n.strip_prefix("step_")).and_then(|n| n.parse().ok()) {
            if entry.path().join(MANIFEST).is_file() {
                steps.push(step);
            }
        }
    }
    steps.sort_unstable();
    Ok(steps)
}

/// Load `step`, or the latest checkpoint when `None`.
pub fn load_checkpoint(root: &Path, step: Option<u64>) -> Result<LoadedCheckpoint> {
    let available = list_checkpoints(root)?;
    let step = match step {
        Some(s) if available.contains(&s) => s,
        Some(s) => return Err(EtherError::MissingCheckpoint { requested: s, available }),
        None => *available
            .last()
            .ok_or_else(|| EtherError::Usage(format!("no checkpoints under {}", root.display())))?,
    };
    let dir = step_dir(root, step);
    let integrity = |m: String| EtherError::Integrity(format!("{}: {m}", dir.display()));
    let manifest: Manifest = serde_json::from_slice(&std::fs::read(dir.join(MANIFEST))?)
        .map_err(|e| integrity(format!("unreadable manifest ({e})")))?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(integrity(format!("format version {} (expected {FORMAT_VERSION})", manifest.format_version)));
    }
    if manifest.step != step {
        return Err(integrity(format!("manifest names step {}", manifest.step)));
    }
    let blob = std::fs::read(dir.join(BLOB))?;
    if blob.len() as u64 != manifest.blob_bytes || hex::encode(Sha256::digest(&blob)) != manifest.sha256 {
        return Err(integrity("tensor data does not match the manifest checksum".into()));
    }
    let mut tensors = BTreeMap::new();
    for e in &manifest.tensors {
        let w = width(&e.dtype)?;
        let n: usize = e.shape.iter().product();
        let start = usize::try_from(e.offset).map_err(|_| integrity(format!("{}: offset overflows", e.name)))?;
        let end = start
            .checked_add(n * w)
            .filter(|&end| end <= blob.len())
            .ok_or_else(|| integrity(format!("{}: bytes {start}+{} exceed the blob", e.name, n * w)))?;
        let bytes = &blob[start..end];
        let t = if w == 4 {
            let v: Vec<f32> = bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
            Tensor::from_vec(v, e.shape.as_slice(), &Device::Cpu)?
        } else {
            let v: Vec<f64> = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
            Tensor::from_vec(v, e.shape.as_slice(), &Device::Cpu)?
        };
        if tensors.insert(e.name.clone(), t).is_some() {
            return Err(integrity(format!("duplicate tensor {}", e.name)));
        }
    }
    Ok(LoadedCheckpoint {
        step,
        snapshot: ParamSnapshot {
            version: manifest.version,
            tensors,
        },
        manifest,
    })
}

/// The tensors whose names start with one of `prefixes`.
pub fn select(snapshot: &ParamSnapshot, prefixes: &[&str]) -> ParamSnapshot {
    ParamSnapshot {
        version: snapshot.version,
        tensors: snapshot
            .tensors
            .iter()
            .filter(|(k, _)| prefixes.iter().any(|p| k.starts_with(p)))
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect(),
    }
}
