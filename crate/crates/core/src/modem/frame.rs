//! Self-describing bit frames: a 10-byte header (magic, payload bit length,
//! CRC-32 of the payload bytes, all big-endian) followed by the payload.

use super::crc::crc32;

pub const FRAME_MAGIC: u16 = 0x4D48;
pub const HEADER_BITS: usize = 80;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FrameError {
    /// Fewer bits than the header or the declared payload needs.
    Short,
    BadMagic,
    CrcMismatch,
}

/// MSB-first packing with zero fill in the last byte.
pub fn bits_to_bytes(bits: &[u8]) -> Vec<u8> {
    bits.chunks(8)
        .map(|c| {
            c.iter()
                .enumerate()
                .fold(0u8, |acc, (i, &b)| acc | ((b & 1) << (7 - i)))
        })
        .collect()
}

pub fn bytes_to_bits(bytes: &[u8]) -> Vec<u8> {
    bytes
        .iter()
        .flat_map(|&b| (0..8).rev().map(move |i| (b >> i) & 1))
        .collect()
}

pub fn build_frame(payload: &[u8]) -> Vec<u8> {
    let len = u32::try_from(payload.len()).expect("payload length fits in 32 bits");
    let mut header = Vec::with_capacity(10);
    header.extend_from_slice(&FRAME_MAGIC.to_be_bytes());
    header.extend_from_slice(&len.to_be_bytes());
    header.extend_from_slice(&crc32(&bits_to_bytes(payload)).to_be_bytes());
    let mut out = bytes_to_bits(&header);
    out.extend_from_slice(payload);
    out
}

/// Validates a frame (trailing padding allowed) and returns its payload bits.
pub fn parse_frame(bits: &[u8]) -> Result<Vec<u8>, FrameError> {
    if bits.len() < HEADER_BITS {
        return Err(FrameError::Short);
    }
    let header = bits_to_bytes(&bits[..HEADER_BITS]);
    if u16::from_be_bytes([header[0], header[1]]) != FRAME_MAGIC {
        return Err(FrameError::BadMagic);
    }
    let len = u32::from_be_bytes([header[2], header[3], header[4], header[5]]) as usize;
    let crc = u32::from_be_bytes([header[6], header[7], header[8], header[9]]);
    let payload = bits
        .get(HEADER_BITS..HEADER_BITS + len)
        .ok_or(FrameError::Short)?;
    if crc32(&bits_to_bytes(payload)) != crc {
        return Err(FrameError::CrcMismatch);
    }
    Ok(payload.to_vec())
}
