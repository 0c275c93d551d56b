//! Latent coordinate sets and their file format.
//!
//! Layout (little-endian): magic `MSLT`, `u32` count, `u32` D, then
//! `count * D` `f64` values row by row and `count` `u16` labels.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const MSLT_MAGIC: &[u8; 4] = b"MSLT";
const HEADER: usize = 12;

/// `count` coordinates of width `dim` with one label each.
#[derive(Clone, Debug, PartialEq)]
pub struct Latents {
    dim: usize,
    data: Vec<f64>,
    labels: Vec<u16>,
}

impl Latents {
    pub fn new(dim: usize, data: Vec<f64>, labels: Vec<u16>) -> Result<Self> {
        if dim == 0 || data.len() != dim * labels.len() {
            return Err(Error::shape(
                "latents",
                format!("{} values for {} rows of width {dim}", data.len(), labels.len()),
            ));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("latent row {}, coordinate {}", i / dim, i % dim)));
        }
        Ok(Self { dim, data, labels })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Row-major `[len, dim]` values.
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn labels(&self) -> &[u16] {
        &self.labels
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks(self.dim)
    }
}

pub fn encode_latents(latents: &Latents) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER + latents.data.len() * 8 + latents.len() * 2);
    out.extend_from_slice(MSLT_MAGIC);
    out.extend_from_slice(&(latents.len() as u32).to_le_bytes());
    out.extend_from_slice(&(latents.dim as u32).to_le_bytes());
    for &v in &latents.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for &l in &latents.labels {
        out.extend_from_slice(&l.to_le_bytes());
    }
    out
}

pub fn decode_latents(buf: &[u8]) -> Result<Latents> {
    if buf.len() < HEADER {
        return Err(Error::format(
            buf.len() as u64,
            format!("truncated header: expected {HEADER} bytes, file has {}", buf.len()),
        ));
    }
    if &buf[..4] != MSLT_MAGIC {
        return Err(Error::format(0, "bad magic, expected MSLT"));
    }
    let count = u32::from_le_bytes(buf[4..8].try_into().unwrap()) as usize;
    let dim = u32::from_le_bytes(buf[8..12].try_into().unwrap()) as usize;
    let values_end = HEADER + count * dim * 8;
    let expected = values_end + count * 2;
    if buf.len() != expected {
        return Err(Error::format(
            buf.len().min(expected) as u64,
            format!("expected file length {expected} for {count} rows of width {dim}, got {}", buf.len()),
        ));
    }
    let data = buf[HEADER..values_end]
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
        .collect();
    let labels = buf[values_end..]
        .chunks_exact(2)
        .map(|b| u16::from_le_bytes(b.try_into().unwrap()))
        .collect();
    Latents::new(dim, data, labels).map_err(|e| Error::format(HEADER as u64, e.to_string()))
}

pub fn write_latents(latents: &Latents, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_latents(latents))?;
    Ok(())
}

pub fn read_latents(path: impl AsRef<Path>) -> Result<Latents> {
    decode_latents(&fs::read(path)?)
}
