//! Binary checkpoint container.
//!
//! Little-endian layout:
//!
//! ```text
//! magic        4 bytes   "PGCK"
//! version      u32
//! skeleton     32 bytes  SHA-256 of the skeleton
//! num_types    u32
//! hidden       u32
//! geo_iters    u32
//! app_iters    u32
//! app_dim      u32
//! branches     u8        0 full, 1 geometry only, 2 appearance only
//! tensors      u32
//! per tensor:
//!   name_len   u16, then UTF-8 name
//!   ndim       u8, then ndim x u32 dims
//!   data       prod(dims) x f64
//! checksum     32 bytes  SHA-256 of everything above
//! ```

use std::path::Path;

use posegroup_core::model::FORMAT_VERSION;
use posegroup_core::{Branches, ModelConfig, ModelParams, SkeletonSpec};
use sha2::{Digest, Sha256};

const MAGIC: &[u8; 4] = b"PGCK";

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("not a checkpoint (bad magic bytes)")]
    BadMagic,
    #[error("checkpoint format version {found}, this build reads version {expected}")]
    Version { found: u32, expected: u32 },
    #[error("checkpoint was trained for a different skeleton (hash mismatch)")]
    SkeletonMismatch,
    #[error("checkpoint is truncated")]
    Truncated,
    #[error("checkpoint checksum mismatch (file corrupted)")]
    Checksum,
    #[error("checkpoint has trailing bytes after the checksum")]
    TrailingBytes,
    #[error("invalid checkpoint: {0}")]
    Invalid(String),
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

pub fn encode(params: &ModelParams) -> Vec<u8> {
    let c = &params.config;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&params.version.to_le_bytes());
    out.extend_from_slice(&params.skeleton_hash);
    for v in [params.num_types, c.hidden, c.geo_iterations, c.app_iterations, c.appearance_dim] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    out.push(c.branches.code());
    let tensors = params.weights.tensors();
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for t in &tensors {
        out.extend_from_slice(&(t.name.len() as u16).to_le_bytes());
        out.extend_from_slice(t.name.as_bytes());
        out.push(t.shape.len() as u8);
        for &d in &t.shape {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in t.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let sum = Sha256::digest(&out);
    out.extend_from_slice(&sum);
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let end = self.pos.checked_add(n).ok_or(CheckpointError::Truncated)?;
        let s = self.buf.get(self.pos..end).ok_or(CheckpointError::Truncated)?;
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, CheckpointError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, CheckpointError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

/// Decodes a checkpoint for `spec`. Header checks come first, so a version
/// or skeleton mismatch is reported even for otherwise damaged files.
pub fn decode(bytes: &[u8], spec: &SkeletonSpec) -> Result<ModelParams, CheckpointError> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4).map_err(|_| CheckpointError::BadMagic)? != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(CheckpointError::Version { found: version, expected: FORMAT_VERSION });
    }
    if r.take(32)? != spec.digest() {
        return Err(CheckpointError::SkeletonMismatch);
    }
    let num_types = r.u32()? as usize;
    if num_types != spec.num_types() {
        return Err(CheckpointError::Invalid(format!("{num_types} joint types, skeleton has {}", spec.num_types())));
    }
    let hidden = r.u32()? as usize;
    let geo_iterations = r.u32()? as usize;
    let app_iterations = r.u32()? as usize;
    let appearance_dim = r.u32()? as usize;
    let code = r.u8()?;
    let branches = Branches::from_code(code).ok_or_else(|| CheckpointError::Invalid(format!("unknown branch code {code}")))?;
    let config = ModelConfig { hidden, geo_iterations, app_iterations, appearance_dim, branches };
    let mut params = ModelParams::zeroed(config, spec).map_err(|e| CheckpointError::Invalid(e.to_string()))?;

    let count = r.u32()? as usize;
    let expected: Vec<(String, Vec<usize>)> =
        params.weights.tensors().iter().map(|t| (t.name.clone(), t.shape.clone())).collect();
    if count != expected.len() {
        return Err(CheckpointError::Invalid(format!("{count} tensors, expected {}", expected.len())));
    }
    {
        let mut slots = params.weights.tensors_mut();
        for (slot, (name, shape)) in slots.iter_mut().zip(&expected) {
            let len = r.u16()? as usize;
            let found = std::str::from_utf8(r.take(len)?).map_err(|_| CheckpointError::Invalid("tensor name is not UTF-8".into()))?;
            if found != name {
                return Err(CheckpointError::Invalid(format!("expected tensor `{name}`, found `{found}`")));
            }
            let ndim = r.u8()? as usize;
            let mut dims = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                dims.push(r.u32()? as usize);
            }
            if &dims != shape {
                return Err(CheckpointError::Invalid(format!("tensor `{name}` has shape {dims:?}, expected {shape:?}")));
            }
            let raw = r.take(slot.len() * 8)?;
            for (v, b) in slot.iter_mut().zip(raw.chunks_exact(8)) {
                *v = f64::from_le_bytes(b.try_into().unwrap());
            }
        }
    }
    let body = r.pos;
    let sum = r.take(32)?;
    if sum != Sha256::digest(&bytes[..body]).as_slice() {
        return Err(CheckpointError::Checksum);
    }
    if r.pos != bytes.len() {
        return Err(CheckpointError::TrailingBytes);
    }
    if !params.weights.is_finite() {
        return Err(CheckpointError::Invalid("non-finite weights".into()));
    }
    Ok(params)
}

pub fn save(params: &ModelParams, path: &Path) -> Result<(), CheckpointError> {
    let bytes = encode(params);
    let tmp = path.with_extension("partial");
    std::fs::write(&tmp, &bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load(path: &Path, spec: &SkeletonSpec) -> Result<ModelParams, CheckpointError> {
    decode(&std::fs::read(path)?, spec)
}
