//! Parameter container file.
//!
//! Layout:
//!
//! ```text
//! 8 bytes   magic "FWPARAMS"
//! u32 LE    container version
//! u64 LE    manifest length in bytes
//! ...       manifest, UTF-8 JSON (see ParamManifest)
//! ...       tensor payloads, f64 little-endian, in manifest order
//! ```

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{NnError, Result};
use crate::gru::MergeConvention;
use crate::module::Module;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"FWPARAMS";
pub const CONTAINER_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamManifest {
    /// Model kind tag, e.g. `gru-ae/v1`.
    pub model_kind: String,
    pub merge_convention: MergeConvention,
    /// Model architecture: layer names, sizes and activations.
    pub config: serde_json::Value,
    /// Free-form provenance (seed, training summary).
    #[serde(default)]
    pub metadata: serde_json::Value,
    pub tensors: Vec<TensorEntry>,
}

pub fn write_params<W: Write, M: Module + ?Sized>(
    mut out: W,
    model_kind: &str,
    merge_convention: MergeConvention,
    config: serde_json::Value,
    metadata: serde_json::Value,
    module: &M,
) -> Result<()> {
    let params = module.params();
    let manifest = ParamManifest {
        model_kind: model_kind.to_string(),
        merge_convention,
        config,
        metadata,
        tensors: params
            .iter()
            .map(|(name, p)| TensorEntry {
                name: name.clone(),
                shape: p.value.shape().to_vec(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&manifest).map_err(|e| NnError::Format(e.to_string()))?;
    out.write_all(MAGIC)?;
    out.write_all(&CONTAINER_VERSION.to_le_bytes())?;
    out.write_all(&(json.len() as u64).to_le_bytes())?;
    out.write_all(&json)?;
    let mut buf = Vec::new();
    for (_, p) in &params {
        buf.clear();
        for v in p.value.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        out.write_all(&buf)?;
    }
    out.flush()?;
    Ok(())
}

/// Reads a container, returning the manifest and the named tensors.
pub fn read_params<R: Read>(mut input: R) -> Result<(ParamManifest, Vec<(String, Tensor)>)> {
    let mut magic = [0u8; 8];
    input.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(NnError::Format("not a parameter file (bad magic)".into()));
    }
    let mut u32buf = [0u8; 4];
    input.read_exact(&mut u32buf)?;
    let version = u32::from_le_bytes(u32buf);
    if version != CONTAINER_VERSION {
        return Err(NnError::Format(format!(
            "unsupported container version {version}, expected {CONTAINER_VERSION}"
        )));
    }
    let mut u64buf = [0u8; 8];
    input.read_exact(&mut u64buf)?;
    let len = u64::from_le_bytes(u64buf) as usize;
    let mut json = vec![0u8; len];
    input.read_exact(&mut json)?;
    let manifest: ParamManifest = serde_json::from_slice(&json).map_err(|e| NnError::Format(e.to_string()))?;

    let mut tensors = Vec::with_capacity(manifest.tensors.len());
    for entry in &manifest.tensors {
        let count: usize = entry.shape.iter().product();
        let mut raw = vec![0u8; count * 8];
        input.read_exact(&mut raw)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect();
        tensors.push((entry.name.clone(), Tensor::from_vec(&entry.shape, data)?));
    }
    Ok((manifest, tensors))
}

/// Copies named tensors into a module whose parameter list must match
/// exactly in names and shapes.
pub fn load_into<M: Module + ?Sized>(module: &mut M, tensors: &[(String, Tensor)]) -> Result<()> {
    let params = module.params_mut();
    if params.len() != tensors.len() {
        return Err(NnError::Format(format!(
            "parameter count mismatch: model has {}, file has {}",
            params.len(),
            tensors.len()
        )));
    }
    for ((name, p), (file_name, t)) in params.into_iter().zip(tensors) {
        if &name != file_name {
            return Err(NnError::Format(format!("expected tensor `{name}`, found `{file_name}`")));
        }
        if p.value.shape() != t.shape() {
            return Err(NnError::Format(format!(
                "tensor `{name}` has shape {:?}, model expects {:?}",
                t.shape(),
                p.value.shape()
            )));
        }
        p.value = t.clone();
        p.zero_grad();
    }
    Ok(())
}
