//! Binary clip-feature files.
//!
//! Layout (little-endian): the magic bytes `MGPF`, `u32` clip count `T_V`,
//! `u32` feature dimension `D_v`, then `T_V·D_v` `f32` values row-major.

use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};

pub const FEATURE_MAGIC: &[u8; 4] = b"MGPF";

#[derive(Debug, Clone, PartialEq)]
pub struct ClipFeatureSequence {
    pub video_id: String,
    /// `T_V × D_v`.
    pub feats: Array2<f32>,
}

impl ClipFeatureSequence {
    pub fn new(video_id: &str, feats: Array2<f32>) -> Result<Self> {
        if feats.nrows() == 0 || feats.ncols() == 0 {
            return Err(Error::Validation(format!("{video_id}: empty feature matrix")));
        }
        if feats.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation(format!("{video_id}: non-finite feature value")));
        }
        Ok(Self {
            video_id: video_id.to_string(),
            feats,
        })
    }

    pub fn num_clips(&self) -> usize {
        self.feats.nrows()
    }

    pub fn dim(&self) -> usize {
        self.feats.ncols()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(12 + 4 * self.feats.len());
        out.extend_from_slice(FEATURE_MAGIC);
        out.extend_from_slice(&(self.num_clips() as u32).to_le_bytes());
        out.extend_from_slice(&(self.dim() as u32).to_le_bytes());
        for v in self.feats.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }
}

/// Decodes a feature file; the video id is supplied by the caller.
pub fn read_features(video_id: &str, bytes: &[u8]) -> Result<ClipFeatureSequence> {
    if bytes.len() < 12 || &bytes[..4] != FEATURE_MAGIC {
        return Err(Error::Format(format!("{video_id}: missing MGPF header")));
    }
    let word = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap()) as usize;
    let (clips, dim) = (word(4), word(8));
    let expected = clips
        .checked_mul(dim)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| Error::Format(format!("{video_id}: header overflows")))?;
    let payload = &bytes[12..];
    if payload.len() != expected {
        return Err(Error::Format(format!(
            "{video_id}: header declares {clips}x{dim} floats ({expected} bytes), payload has {} bytes",
            payload.len()
        )));
    }
    let values: Vec<f32> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let feats = Array2::from_shape_vec((clips, dim), values)
        .map_err(|e| Error::Format(format!("{video_id}: {e}")))?;
    ClipFeatureSequence::new(video_id, feats).map_err(|e| Error::Format(e.to_string()))
}

/// Reads `path`; the video id is the file stem.
pub fn load_features(path: &Path) -> Result<ClipFeatureSequence> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    read_features(&id, &bytes)
}

pub fn write_features(path: &Path, seq: &ClipFeatureSequence) -> Result<()> {
    std::fs::write(path, seq.to_bytes()).map_err(|e| Error::io(path, e))
}
