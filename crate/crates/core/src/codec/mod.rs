//! Semantic-link codecs and the residual compressor.

pub mod blocks;
mod dct;
mod linear;
mod residual;

pub use dct::BlockDct;
pub use linear::{LinearCodec, LinearInit};
pub use residual::{ColorAffine, ResidualCompressor};

use crate::error::{Error, Result};
use crate::image::ImageTensor;

/// One codec instance is shared by every hop of a chain.
#[derive(Debug, Clone, PartialEq)]
pub enum SemanticCodec {
    BlockDct(BlockDct),
    Linear(LinearCodec),
}

impl SemanticCodec {
    pub fn code_len(&self) -> usize {
        match self {
            Self::BlockDct(c) => c.code_len(),
            Self::Linear(c) => c.code_len(),
        }
    }

    pub fn encode(&self, img: &ImageTensor) -> Result<Vec<f64>> {
        match self {
            Self::BlockDct(c) => c.encode(img),
            Self::Linear(c) => c.encode(img),
        }
    }

    pub fn decode(&self, code: &[f64]) -> Result<ImageTensor> {
        match self {
            Self::BlockDct(c) => c.decode(code),
            Self::Linear(c) => c.decode(code),
        }
    }

    pub fn grid(&self) -> blocks::BlockGrid {
        match self {
            Self::BlockDct(c) => c.grid(),
            Self::Linear(c) => c.grid(),
        }
    }

    pub(crate) fn encode_blocks(&self, blocks: &[f64]) -> Vec<f64> {
        match self {
            Self::BlockDct(c) => c.encode_blocks(blocks),
            Self::Linear(c) => c.encode_blocks(blocks),
        }
    }

    pub(crate) fn decode_blocks(&self, code: &[f64]) -> Vec<f64> {
        match self {
            Self::BlockDct(c) => c.decode_blocks(code),
            Self::Linear(c) => c.decode_blocks(code),
        }
    }

    /// Transpose of the encoder; the DCT rows are orthonormal, so its
    /// transpose is the decoder.
    pub(crate) fn encode_adjoint(&self, grad_code: &[f64]) -> Vec<f64> {
        match self {
            Self::BlockDct(c) => c.decode_blocks(grad_code),
            Self::Linear(c) => c.encode_adjoint(grad_code),
        }
    }

    pub(crate) fn decode_adjoint(&self, grad_blocks: &[f64]) -> Vec<f64> {
        match self {
            Self::BlockDct(c) => c.encode_blocks(grad_blocks),
            Self::Linear(c) => c.decode_adjoint(grad_blocks),
        }
    }

    /// Decoder output before clamping to `[0, 1]`.
    pub fn decode_linear(&self, code: &[f64]) -> Result<Vec<f64>> {
        match self {
            Self::BlockDct(c) => c.decode_linear(code),
            Self::Linear(c) => c.decode_linear(code),
        }
    }
}

/// Weight `γ^(N-n)` of hop `n` (1-based) in an `N`-hop recursive loss.
pub fn hop_weight(hop: usize, hops: usize, gamma: f64) -> f64 {
    gamma.powi((hops - hop) as i32)
}

/// `(1 / (N·I)) Σ_i Σ_n γ^(N-n) D_n^i` for per-image, per-hop distortions.
pub fn recursive_loss(per_image: &[Vec<f64>], gamma: f64) -> Result<f64> {
    if gamma.is_nan() || gamma <= 0.0 {
        return Err(Error::Config(format!("γ must be positive, got {gamma}")));
    }
    let Some(hops) = per_image.first().map(Vec::len) else {
        return Ok(0.0);
    };
    if hops == 0 || per_image.iter().any(|d| d.len() != hops) {
        return Err(Error::Dimension(
            "every image needs the same nonzero hop count".into(),
        ));
    }
    let total: f64 = per_image
        .iter()
        .flat_map(|d| {
            d.iter()
                .enumerate()
                .map(|(n, m)| hop_weight(n + 1, hops, gamma) * m)
        })
        .sum();
    Ok(total / (hops * per_image.len()) as f64)
}
