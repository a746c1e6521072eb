//! Gridded Tensor File (GTF) codec.
//!
//! ```text
//! offset  size        field
//! 0       4           magic "GTF1"
//! 4       1           rank r (0..=8)
//! 5       4·r         extents, u32 little-endian
//! 5+4r    4·Πextents  payload, f32 little-endian, row-major
//! ```
//!
//! NaN payloads are carried bit-for-bit. A JSON sidecar (`<file>.json`) holds
//! axis names, coordinates, channel names and a SHA-256 of the payload.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{ArrayD, IxDyn};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"GTF1";
pub const MAX_RANK: usize = 8;

fn format_err(offset: usize, message: impl Into<String>) -> Error {
    Error::Format {
        offset: offset as u64,
        message: message.into(),
    }
}

pub fn encode_gtf(array: &ArrayD<f32>) -> Result<Vec<u8>> {
    let rank = array.ndim();
    if rank > MAX_RANK {
        return Err(format_err(4, format!("rank {rank} exceeds {MAX_RANK}")));
    }
    let mut out = Vec::with_capacity(5 + 4 * rank + 4 * array.len());
    out.extend_from_slice(MAGIC);
    out.push(rank as u8);
    for (i, &e) in array.shape().iter().enumerate() {
        let e = u32::try_from(e).map_err(|_| format_err(5 + 4 * i, format!("extent {e} does not fit u32")))?;
        out.extend_from_slice(&e.to_le_bytes());
    }
    for v in array.iter() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_gtf(bytes: &[u8]) -> Result<ArrayD<f32>> {
    if bytes.len() < 5 {
        return Err(format_err(bytes.len(), "truncated header"));
    }
    if &bytes[..4] != MAGIC {
        return Err(format_err(0, format!("bad magic {:?}", String::from_utf8_lossy(&bytes[..4]))));
    }
    let rank = bytes[4] as usize;
    if rank > MAX_RANK {
        return Err(format_err(4, format!("rank {rank} exceeds {MAX_RANK}")));
    }
    let header = 5 + 4 * rank;
    if bytes.len() < header {
        return Err(format_err(bytes.len(), "truncated extents"));
    }
    let mut extents = Vec::with_capacity(rank);
    let mut count: usize = 1;
    for i in 0..rank {
        let off = 5 + 4 * i;
        let e = u32::from_le_bytes(bytes[off..off + 4].try_into().expect("4 bytes")) as usize;
        count = count
            .checked_mul(e)
            .ok_or_else(|| format_err(off, "extent product overflows"))?;
        extents.push(e);
    }
    let payload_len = count
        .checked_mul(4)
        .ok_or_else(|| format_err(header, "payload size overflows"))?;
    let expected = header + payload_len;
    if bytes.len() < expected {
        return Err(format_err(
            bytes.len(),
            format!("truncated payload: expected {expected} bytes, found {}", bytes.len()),
        ));
    }
    if bytes.len() > expected {
        return Err(format_err(expected, format!("{} trailing bytes", bytes.len() - expected)));
    }
    let data: Vec<f32> = bytes[header..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    Ok(ArrayD::from_shape_vec(IxDyn(&extents), data).expect("extent product matches payload"))
}

pub fn payload_sha256(array: &ArrayD<f32>) -> String {
    let mut h = Sha256::new();
    for v in array.iter() {
        h.update(v.to_le_bytes());
    }
    hex::encode(h.finalize())
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AxisMeta {
    pub name: String,
    pub extent: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coords: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<Vec<String>>,
}

impl AxisMeta {
    pub fn plain(name: &str, extent: usize) -> Self {
        AxisMeta {
            name: name.into(),
            extent,
            ..Default::default()
        }
    }
}

/// JSON sidecar written next to every GTF file.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GtfManifest {
    pub axes: Vec<AxisMeta>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub channels: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub channel_manifest_hash: Option<String>,
    pub payload_sha256: String,
    /// Free-form annotations (pipeline stage, split role, target name).
    #[serde(default)]
    pub attrs: serde_json::Map<String, serde_json::Value>,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

pub fn write_gtf(path: &Path, array: &ArrayD<f32>) -> Result<()> {
    let bytes = encode_gtf(array)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_gtf(path: &Path) -> Result<ArrayD<f32>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_gtf(&bytes)
}

/// Write the tensor plus its sidecar. The payload checksum is filled in here.
pub fn write_gtf_with_manifest(path: &Path, array: &ArrayD<f32>, mut manifest: GtfManifest) -> Result<()> {
    if manifest.axes.len() != array.ndim() {
        return Err(Error::Shape(format!(
            "manifest names {} axes but tensor has rank {}",
            manifest.axes.len(),
            array.ndim()
        )));
    }
    for (axis, &e) in manifest.axes.iter_mut().zip(array.shape()) {
        axis.extent = e;
    }
    manifest.payload_sha256 = payload_sha256(array);
    write_gtf(path, array)?;
    let side = sidecar_path(path);
    let json = serde_json::to_string_pretty(&manifest)?;
    fs::write(&side, json).map_err(|e| Error::io(&side, e))
}

/// Read a tensor and its sidecar, verifying extents and checksum.
pub fn read_gtf_with_manifest(path: &Path) -> Result<(ArrayD<f32>, GtfManifest)> {
    let array = read_gtf(path)?;
    let side = sidecar_path(path);
    let text = fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
    let manifest: GtfManifest = serde_json::from_str(&text)?;
    let extents: Vec<usize> = manifest.axes.iter().map(|a| a.extent).collect();
    if extents != array.shape() {
        return Err(Error::Shape(format!(
            "{}: sidecar extents {extents:?} but payload has {:?}",
            path.display(),
            array.shape()
        )));
    }
    let sum = payload_sha256(&array);
    if sum != manifest.payload_sha256 {
        return Err(format_err(
            5 + 4 * array.ndim(),
            format!("payload checksum mismatch for {}", path.display()),
        ));
    }
    Ok((array, manifest))
}
