//! Flat weight files: a 16-byte header (4-byte magic, `u16` version, `u16`
//! dimension, `u32` K, `u32` Q, all little-endian) followed by IEEE-754
//! doubles in little-endian order.

use std::path::Path;

use crate::error::{Error, Result};

pub const VERSION: u16 = 1;
const HEADER_LEN: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WeightsHeader {
    pub magic: [u8; 4],
    pub dim: u16,
    pub k: u32,
    pub q: u32,
}

pub fn encode_weights(header: &WeightsHeader, values: &[f64]) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * values.len());
    out.extend_from_slice(&header.magic);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&header.dim.to_le_bytes());
    out.extend_from_slice(&header.k.to_le_bytes());
    out.extend_from_slice(&header.q.to_le_bytes());
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_weights(bytes: &[u8], magic: [u8; 4]) -> Result<(WeightsHeader, Vec<f64>)> {
    if bytes.len() < HEADER_LEN || !(bytes.len() - HEADER_LEN).is_multiple_of(8) {
        return Err(Error::Weights(format!("bad file length {}", bytes.len())));
    }
    if bytes[..4] != magic {
        return Err(Error::Weights(format!(
            "expected magic {:?}, found {:?}",
            String::from_utf8_lossy(&magic),
            String::from_utf8_lossy(&bytes[..4])
        )));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != VERSION {
        return Err(Error::Weights(format!("unsupported version {version}")));
    }
    let header = WeightsHeader {
        magic,
        dim: u16::from_le_bytes([bytes[6], bytes[7]]),
        k: u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")),
        q: u32::from_le_bytes(bytes[12..16].try_into().expect("4 bytes")),
    };
    let values = bytes[HEADER_LEN..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    Ok((header, values))
}

pub fn write_weights(path: impl AsRef<Path>, header: &WeightsHeader, values: &[f64]) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_weights(header, values)).map_err(|e| Error::io(path, e))
}

pub fn read_weights(path: impl AsRef<Path>, magic: [u8; 4]) -> Result<(WeightsHeader, Vec<f64>)> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_weights(&bytes, magic)
}
