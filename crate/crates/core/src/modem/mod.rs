//! Digital residual link: LDPC coding, Gray QAM and CRC-checked framing.

mod crc;
mod frame;
mod ldpc;
mod qam;

pub use crc::crc32;
pub use frame::{
    bits_to_bytes, build_frame, bytes_to_bits, parse_frame, FrameError, FRAME_MAGIC, HEADER_BITS,
};
pub use ldpc::{BpRule, DecodeOutput, LdpcCode};
pub use qam::QamConstellation;

use crate::channel::SymbolVector;
use crate::error::Result;

pub const DEFAULT_MAX_ITERS: usize = 50;

/// Parity-check matrices bundled with the crate (regenerate with the
/// `generate_codes` example).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShippedCode {
    /// (3,6)-regular, N=96.
    Rate12Short,
    /// (3,6)-regular, N=1024.
    Rate12Long,
    /// (3,9)-regular, N=96.
    Rate23Short,
    /// (3,9)-regular, N=1032.
    Rate23Long,
}

impl ShippedCode {
    pub const ALL: [ShippedCode; 4] = [
        Self::Rate12Short,
        Self::Rate12Long,
        Self::Rate23Short,
        Self::Rate23Long,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::Rate12Short => "r12_n96",
            Self::Rate12Long => "r12_n1024",
            Self::Rate23Short => "r23_n96",
            Self::Rate23Long => "r23_n1032",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.name() == name)
    }

    pub fn alist(self) -> &'static str {
        match self {
            Self::Rate12Short => include_str!("../../codes/r12_n96.alist"),
            Self::Rate12Long => include_str!("../../codes/r12_n1024.alist"),
            Self::Rate23Short => include_str!("../../codes/r23_n96.alist"),
            Self::Rate23Long => include_str!("../../codes/r23_n1032.alist"),
        }
    }

    pub fn load(self) -> Result<LdpcCode> {
        LdpcCode::parse_alist(self.alist())
    }
}

/// Result of pushing a received frame back through demodulation, decoding
/// and the header/CRC check.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrameOutcome {
    pub payload: std::result::Result<Vec<u8>, FrameError>,
    pub blocks: usize,
    pub blocks_converged: usize,
}

/// Frames, encodes and modulates payload bits for one link configuration.
#[derive(Debug, Clone)]
pub struct ResidualModem {
    code: LdpcCode,
    qam: QamConstellation,
    max_iters: usize,
}

impl ResidualModem {
    pub fn new(code: LdpcCode, qam: QamConstellation, max_iters: usize) -> Self {
        Self {
            code,
            qam,
            max_iters,
        }
    }

    pub fn code(&self) -> &LdpcCode {
        &self.code
    }

    pub fn qam(&self) -> &QamConstellation {
        &self.qam
    }

    pub fn blocks_for(&self, payload_bits: usize) -> usize {
        (HEADER_BITS + payload_bits).div_ceil(self.code.k())
    }

    /// Channel symbols used by a frame carrying `payload_bits`.
    pub fn symbols_for(&self, payload_bits: usize) -> usize {
        (self.blocks_for(payload_bits) * self.code.n()).div_ceil(self.qam.bits_per_symbol())
    }

    pub fn modulate_frame(&self, payload: &[u8]) -> Result<SymbolVector> {
        let k = self.code.k();
        let mut bits = build_frame(payload);
        bits.resize(self.blocks_for(payload.len()) * k, 0);
        let mut coded = Vec::with_capacity(bits.len() / k * self.code.n());
        for block in bits.chunks_exact(k) {
            coded.extend(self.code.encode(block)?);
        }
        let bps = self.qam.bits_per_symbol();
        coded.resize(coded.len().div_ceil(bps) * bps, 0);
        self.qam.modulate(&coded)
    }

    /// `noise_var` is the per-symbol variance after unbiased equalization.
    pub fn demodulate_frame(
        &self,
        received: &SymbolVector,
        noise_var: &[f64],
    ) -> Result<FrameOutcome> {
        let llrs = self.qam.demodulate_llr(received, noise_var)?;
        let n = self.code.n();
        let blocks = llrs.len() / n;
        let mut bits = Vec::with_capacity(blocks * self.code.k());
        let mut converged = 0;
        for chunk in llrs.chunks_exact(n) {
            let out = self.code.decode(chunk, self.max_iters)?;
            converged += usize::from(out.converged);
            bits.extend(out.info);
        }
        Ok(FrameOutcome {
            payload: parse_frame(&bits),
            blocks,
            blocks_converged: converged,
        })
    }
}
