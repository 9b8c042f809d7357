//! Single-file checkpoints.
//!
//! Layout, byte for byte:
//!
//! ```text
//! ENDOSEG-CKPT 1\n
//! <decimal byte length L of the header>\n
//! <L bytes of JSON header>\n
//! <parameter arrays as little-endian f32, in header order>
//! ```
//!
//! The header holds the network config, seed, epoch and learning-rate state
//! and lists every array (layer path, dims, trainable flag) sorted by path.
//! Normalisation running statistics are stored as non-trainable arrays.

use crate::error::{NetError, Result};
use crate::model::{build_denseunet, NetConfig, Network};
use crate::params::{ParamEntry, ParamStore};
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;

pub const MAGIC: &str = "ENDOSEG-CKPT 1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrayInfo {
    pub path: String,
    pub dims: [usize; 4],
    pub trainable: bool,
}

/// Training state carried with the weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub role: String,
    pub seed: u64,
    /// Epochs completed.
    pub epoch: usize,
    pub initial_lr: f64,
    pub lr_decay: f64,
    /// Learning rate the next epoch would use.
    pub next_learning_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    config: NetConfig,
    meta: CheckpointMeta,
    arrays: Vec<ArrayInfo>,
}

fn bad(msg: impl Into<String>) -> NetError {
    NetError::Checkpoint(msg.into())
}

pub fn to_bytes(net: &Network, meta: &CheckpointMeta) -> Result<Vec<u8>> {
    let mut entries: Vec<&ParamEntry> = net.params.entries().iter().collect();
    entries.sort_by(|a, b| a.path.cmp(&b.path));
    let header = Header {
        config: net.config.clone(),
        meta: meta.clone(),
        arrays: entries.iter().map(|e| ArrayInfo { path: e.path.clone(), dims: e.dims, trainable: e.trainable }).collect(),
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::new();
    writeln!(out, "{MAGIC}")?;
    writeln!(out, "{}", json.len())?;
    out.extend_from_slice(&json);
    out.push(b'\n');
    for e in entries {
        for v in &e.values {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    Ok(out)
}

pub fn from_bytes(bytes: &[u8]) -> Result<(Network, CheckpointMeta)> {
    let line = |start: usize| -> Result<(&[u8], usize)> {
        let end = bytes[start..].iter().position(|&b| b == b'\n').ok_or_else(|| bad("truncated header"))?;
        Ok((&bytes[start..start + end], start + end + 1))
    };
    let (magic, next) = line(0)?;
    if magic != MAGIC.as_bytes() {
        return Err(bad("not an endoseg checkpoint"));
    }
    let (len, next) = line(next)?;
    let len: usize = std::str::from_utf8(len).ok().and_then(|s| s.parse().ok()).ok_or_else(|| bad("bad header length"))?;
    if bytes.len() < next + len + 1 || bytes[next + len] != b'\n' {
        return Err(bad("truncated header"));
    }
    let header: Header = serde_json::from_slice(&bytes[next..next + len]).map_err(|e| bad(format!("header: {e}")))?;
    let mut pos = next + len + 1;
    let mut entries = Vec::with_capacity(header.arrays.len());
    for a in &header.arrays {
        let n: usize = a.dims.iter().product();
        let end = pos + 4 * n;
        if end > bytes.len() {
            return Err(bad(format!("data for {} truncated", a.path)));
        }
        let values =
            bytes[pos..end].chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64).collect::<Vec<_>>();
        if values.iter().any(|v| !v.is_finite()) {
            return Err(bad(format!("non-finite values in {}", a.path)));
        }
        entries.push(ParamEntry { path: a.path.clone(), dims: a.dims, values, trainable: a.trainable });
        pos = end;
    }
    if pos != bytes.len() {
        return Err(bad(format!("{} trailing bytes", bytes.len() - pos)));
    }
    // the arrays must be exactly those the config builds
    let reference = build_denseunet(header.config.clone(), 0).map_err(|e| bad(format!("config: {e}")))?;
    let mut expected: Vec<(String, [usize; 4])> = reference.params.entries().iter().map(|e| (e.path.clone(), e.dims)).collect();
    expected.sort();
    let mut found: Vec<(String, [usize; 4])> = entries.iter().map(|e| (e.path.clone(), e.dims)).collect();
    found.sort();
    if expected != found {
        return Err(bad("arrays do not match the network config"));
    }
    let params = ParamStore::from_entries(entries)?;
    Ok((Network { config: header.config, params }, header.meta))
}

pub fn save(path: &Path, net: &Network, meta: &CheckpointMeta) -> Result<()> {
    std::fs::write(path, to_bytes(net, meta)?)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<(Network, CheckpointMeta)> {
    from_bytes(&std::fs::read(path)?)
}
