//! HSC cube files.
//!
//! Layout (little-endian): magic `HSC1`, `u32` H, W, C, then `H*W*C` `f32`
//! values in (row, col, band) order, a `u8` flag, and when the flag is 1,
//! `H*W` `u16` labels.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

use super::{HsiCube, LabelMap};

pub const HSC_MAGIC: &[u8; 4] = b"HSC1";
const HEADER: usize = 16;

pub fn encode_hsc(cube: &HsiCube, labels: Option<&LabelMap>) -> Result<Vec<u8>> {
    if let Some(l) = labels {
        if !l.matches(cube) {
            return Err(Error::shape(
                "write_cube",
                format!(
                    "labels {}x{} for cube {}x{}",
                    l.height(),
                    l.width(),
                    cube.height(),
                    cube.width()
                ),
            ));
        }
    }
    let mut out = Vec::with_capacity(HEADER + cube.values().len() * 4 + 1);
    out.extend_from_slice(HSC_MAGIC);
    for d in [cube.height(), cube.width(), cube.bands()] {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for &v in cube.values() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    match labels {
        Some(l) => {
            out.push(1);
            for &v in l.labels() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        None => out.push(0),
    }
    Ok(out)
}

fn read_u32(buf: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(buf[at..at + 4].try_into().unwrap())
}

pub fn decode_hsc(buf: &[u8]) -> Result<(HsiCube, Option<LabelMap>)> {
    if buf.len() < HEADER {
        return Err(Error::format(
            buf.len() as u64,
            format!("truncated header: expected {HEADER} bytes, file has {}", buf.len()),
        ));
    }
    if &buf[..4] != HSC_MAGIC {
        return Err(Error::format(0, "bad magic, expected HSC1"));
    }
    let (h, w, c) = (
        read_u32(buf, 4) as usize,
        read_u32(buf, 8) as usize,
        read_u32(buf, 12) as usize,
    );
    let n = h * w * c;
    let flag_at = HEADER + n * 4;
    if buf.len() <= flag_at {
        return Err(Error::format(
            buf.len() as u64,
            format!(
                "truncated values: expected at least {} bytes, file has {}",
                flag_at + 1,
                buf.len()
            ),
        ));
    }
    let values = buf[HEADER..flag_at]
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
        .collect();
    let cube = HsiCube::new(h, w, c, values).map_err(|e| Error::format(4, e.to_string()))?;
    let labels = match buf[flag_at] {
        0 => {
            if buf.len() != flag_at + 1 {
                return Err(Error::format(flag_at as u64 + 1, "trailing bytes after cube"));
            }
            None
        }
        1 => {
            let expected = flag_at + 1 + h * w * 2;
            if buf.len() != expected {
                return Err(Error::format(
                    buf.len().min(expected) as u64,
                    format!("label block: expected file length {expected}, got {}", buf.len()),
                ));
            }
            let labels = buf[flag_at + 1..]
                .chunks_exact(2)
                .map(|b| u16::from_le_bytes(b.try_into().unwrap()))
                .collect();
            Some(LabelMap::new(h, w, labels).map_err(|e| Error::format(flag_at as u64 + 1, e.to_string()))?)
        }
        other => {
            return Err(Error::format(flag_at as u64, format!("label flag must be 0 or 1, got {other}")))
        }
    };
    Ok((cube, labels))
}

pub fn write_cube(cube: &HsiCube, labels: Option<&LabelMap>, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_hsc(cube, labels)?)?;
    Ok(())
}

pub fn read_cube(path: impl AsRef<Path>) -> Result<(HsiCube, Option<LabelMap>)> {
    decode_hsc(&fs::read(path)?)
}
