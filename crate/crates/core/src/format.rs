//! On-disk formats: the `.spt` binary tensor file, JSON weight files, the
//! TOML engine config and the plain-text point list.
//!
//! `.spt` layout (all little-endian):
//!
//! ```text
//! "SPT1"                                   4 bytes
//! version batches n channels mx my mz      7 × u32
//! batch[n] x[n] y[n] z[n]                  4 × n × i32
//! features[n × channels]                   f32, row-major
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::coord::{LctBackend, LctConfig};
use crate::engine::WeightTensor;
use crate::error::{Error, Result};
use crate::tensor::{GridShape, Point, SparseTensor, VoxelIndices};

pub const SPT_MAGIC: [u8; 4] = *b"SPT1";
pub const SPT_VERSION: u32 = 1;
pub const SPT_HEADER_LEN: usize = 4 + 7 * 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct SptHeader {
    pub version: u32,
    pub batches: u32,
    pub n: u32,
    pub channels: u32,
    pub max_x: u32,
    pub max_y: u32,
    pub max_z: u32,
}

impl SptHeader {
    /// Total file length implied by the header, `None` on overflow.
    pub fn file_len(&self) -> Option<usize> {
        let n = self.n as usize;
        let coords = n.checked_mul(16)?;
        let feats = n.checked_mul(self.channels as usize)?.checked_mul(4)?;
        SPT_HEADER_LEN.checked_add(coords)?.checked_add(feats)
    }
}

pub fn encode_tensor(t: &SparseTensor) -> Vec<u8> {
    let n = t.len();
    let shape = t.shape();
    let mut out = Vec::with_capacity(SPT_HEADER_LEN + n * 16 + t.features().len() * 4);
    out.extend_from_slice(&SPT_MAGIC);
    for v in [
        SPT_VERSION,
        shape.batches(),
        n as u32,
        t.channels() as u32,
        shape.max_x(),
        shape.max_y(),
        shape.max_z(),
    ] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    let idx = t.indices();
    for arr in [&idx.batch, &idx.x, &idx.y, &idx.z] {
        for v in arr.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    for v in t.features() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn u32_at(bytes: &[u8], off: usize) -> u32 {
    u32::from_le_bytes(bytes[off..off + 4].try_into().unwrap())
}

/// Parses and checks the fixed header only.
pub fn decode_header(bytes: &[u8]) -> Result<SptHeader> {
    let prefix = bytes.len().min(4);
    if bytes[..prefix] != SPT_MAGIC[..prefix] {
        return Err(Error::BadMagic);
    }
    if bytes.len() < SPT_HEADER_LEN {
        return Err(Error::Truncated {
            expected: SPT_HEADER_LEN,
            found: bytes.len(),
        });
    }
    let h = SptHeader {
        version: u32_at(bytes, 4),
        batches: u32_at(bytes, 8),
        n: u32_at(bytes, 12),
        channels: u32_at(bytes, 16),
        max_x: u32_at(bytes, 20),
        max_y: u32_at(bytes, 24),
        max_z: u32_at(bytes, 28),
    };
    if h.version != SPT_VERSION {
        return Err(Error::VersionUnsupported(h.version));
    }
    Ok(h)
}

pub fn decode_tensor(bytes: &[u8]) -> Result<SparseTensor> {
    let h = decode_header(bytes)?;
    let expected = h
        .file_len()
        .ok_or_else(|| Error::InvariantViolation("header sizes overflow".into()))?;
    if bytes.len() < expected {
        return Err(Error::Truncated {
            expected,
            found: bytes.len(),
        });
    }
    if bytes.len() > expected {
        return Err(Error::InvariantViolation(format!(
            "{} trailing bytes after payload",
            bytes.len() - expected
        )));
    }
    let shape = GridShape::new(h.max_x, h.max_y, h.max_z, h.batches)
        .map_err(|e| Error::InvariantViolation(e.to_string()))?;
    let n = h.n as usize;
    let array = |k: usize| -> Vec<i32> {
        let start = SPT_HEADER_LEN + k * n * 4;
        bytes[start..start + n * 4]
            .chunks_exact(4)
            .map(|c| i32::from_le_bytes(c.try_into().unwrap()))
            .collect()
    };
    let indices = VoxelIndices {
        batch: array(0),
        x: array(1),
        y: array(2),
        z: array(3),
    };
    let features = bytes[SPT_HEADER_LEN + 16 * n..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    SparseTensor::new(shape, indices, features, h.channels as usize)
        .map_err(|e| Error::InvariantViolation(e.to_string()))
}

pub fn save_tensor(path: impl AsRef<Path>, t: &SparseTensor) -> Result<()> {
    fs::write(path, encode_tensor(t))?;
    Ok(())
}

pub fn load_tensor(path: impl AsRef<Path>) -> Result<SparseTensor> {
    decode_tensor(&fs::read(path)?)
}

pub const WEIGHT_LAYOUT: &str = "oc_koff_ic";

/// JSON weight document; `kernel` is the kernel size (or stride), so the
/// value count is `out_channels · kernel³ · in_channels`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightFile {
    pub out_channels: usize,
    pub in_channels: usize,
    pub kernel: usize,
    pub layout: String,
    pub values: Vec<f32>,
}

impl WeightFile {
    pub fn from_tensor(w: &WeightTensor, kernel: usize) -> Result<Self> {
        if kernel.pow(3) != w.kernel_volume() {
            return Err(Error::ShapeMismatch(format!(
                "kernel {kernel} does not match kernel volume {}",
                w.kernel_volume()
            )));
        }
        Ok(Self {
            out_channels: w.out_channels(),
            in_channels: w.in_channels(),
            kernel,
            layout: WEIGHT_LAYOUT.to_string(),
            values: w.values().to_vec(),
        })
    }

    pub fn into_tensor(self) -> Result<WeightTensor> {
        if self.layout != WEIGHT_LAYOUT {
            return Err(Error::Parse(format!(
                "unsupported weight layout `{}`, expected `{WEIGHT_LAYOUT}`",
                self.layout
            )));
        }
        WeightTensor::new(
            self.out_channels,
            self.in_channels,
            self.kernel.pow(3),
            self.values,
        )
    }
}

pub fn load_weights(path: impl AsRef<Path>) -> Result<WeightFile> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Parse(format!("weight file: {e}")))
}

pub fn save_weights(path: impl AsRef<Path>, w: &WeightFile) -> Result<()> {
    let text = serde_json::to_string_pretty(w).map_err(|e| Error::Parse(e.to_string()))?;
    fs::write(path, text)?;
    Ok(())
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EngineConfig {
    #[serde(default)]
    pub lct: LctSection,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LctSection {
    pub dense_threshold: Option<usize>,
    pub backend: Option<LctBackend>,
}

impl EngineConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Parse(format!("config: {e}")))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?)
    }

    /// Applies file settings on top of `base`.
    pub fn apply(&self, mut base: LctConfig) -> LctConfig {
        if let Some(t) = self.lct.dense_threshold {
            base.dense_threshold = t;
        }
        if let Some(b) = self.lct.backend {
            base.backend = b;
        }
        base
    }
}

/// Parses `batch,fx,fy,fz,f0,...` lines. A first line whose leading field is
/// not numeric is treated as a header. Returns the points and channel count.
pub fn parse_points(text: &str) -> Result<(Vec<Point>, usize)> {
    let mut points = Vec::new();
    let mut channels = None;
    let mut first = true;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if first {
            first = false;
            if fields[0].parse::<f64>().is_err() {
                continue;
            }
        }
        let bad = |what: &str| Error::Parse(format!("line {}: {what}", lineno + 1));
        if fields.len() < 4 {
            return Err(bad("expected at least batch,x,y,z"));
        }
        let batch: i32 = fields[0].parse().map_err(|_| bad("batch is not an integer"))?;
        let mut position = [0.0f64; 3];
        for (p, f) in position.iter_mut().zip(&fields[1..4]) {
            *p = f.parse().map_err(|_| bad("coordinate is not a number"))?;
        }
        let features = fields[4..]
            .iter()
            .map(|f| f.parse::<f32>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|_| bad("feature is not a number"))?;
        match channels {
            None => channels = Some(features.len()),
            Some(c) if c != features.len() => {
                return Err(bad(&format!("expected {c} features, found {}", features.len())))
            }
            _ => {}
        }
        points.push(Point {
            batch,
            position,
            features,
        });
    }
    Ok((points, channels.unwrap_or(0)))
}
