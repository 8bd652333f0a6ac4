use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::blocks::{dct_basis, BlockGrid, BLOCK_LEN};
use crate::error::{Error, Result};
use crate::image::ImageTensor;
use crate::weights::{decode_weights, encode_weights, read_weights, write_weights, WeightsHeader};

const MAGIC: [u8; 4] = *b"MHLC";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LinearInit {
    /// Leading zig-zag DCT basis vectors, i.e. the block-DCT codec.
    Dct,
    /// Small i.i.d. uniform entries.
    Random { seed: u64 },
}

/// Trainable codec: every 8×8 block of every channel is mapped by the same
/// `m × 64` encoder matrix and reconstructed by the same `64 × m` decoder.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearCodec {
    grid: BlockGrid,
    per_block: usize,
    /// `per_block × 64`, row-major.
    pub(crate) encoder: Vec<f64>,
    /// `64 × per_block`, row-major.
    pub(crate) decoder: Vec<f64>,
}

impl LinearCodec {
    pub fn new(height: usize, width: usize, code_len: usize, init: LinearInit) -> Result<Self> {
        let grid = BlockGrid::new(height, width)?;
        if !grid.is_exact() {
            return Err(Error::Config(format!(
                "linear codec needs sides divisible by 8, got {height}x{width}"
            )));
        }
        let blocks = grid.count();
        if code_len == 0
            || !code_len.is_multiple_of(2)
            || !code_len.is_multiple_of(blocks)
            || code_len / blocks > BLOCK_LEN
        {
            return Err(Error::Config(format!(
                "code length {code_len} must be even and a multiple of {blocks} blocks, at most 64 per block"
            )));
        }
        let m = code_len / blocks;
        let mut encoder = vec![0.0; m * BLOCK_LEN];
        let mut decoder = vec![0.0; BLOCK_LEN * m];
        match init {
            LinearInit::Dct => {
                let basis = dct_basis();
                for r in 0..m {
                    for p in 0..BLOCK_LEN {
                        encoder[r * BLOCK_LEN + p] = basis[r][p];
                        decoder[p * m + r] = basis[r][p];
                    }
                }
            }
            LinearInit::Random { seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let a = 1.0 / (BLOCK_LEN as f64).sqrt();
                encoder
                    .iter_mut()
                    .for_each(|w| *w = rng.random_range(-a..a));
                decoder
                    .iter_mut()
                    .for_each(|w| *w = rng.random_range(-a..a));
            }
        }
        Ok(Self {
            grid,
            per_block: m,
            encoder,
            decoder,
        })
    }

    pub fn code_len(&self) -> usize {
        self.per_block * self.grid.count()
    }

    pub fn per_block(&self) -> usize {
        self.per_block
    }

    pub fn grid(&self) -> BlockGrid {
        self.grid
    }

    pub fn encoder(&self) -> &[f64] {
        &self.encoder
    }

    pub fn decoder(&self) -> &[f64] {
        &self.decoder
    }

    pub(crate) fn encode_blocks(&self, blocks: &[f64]) -> Vec<f64> {
        let m = self.per_block;
        let mut code = Vec::with_capacity(self.code_len());
        for px in blocks.chunks_exact(BLOCK_LEN) {
            for row in self.encoder.chunks_exact(BLOCK_LEN) {
                code.push(row.iter().zip(px).map(|(a, b)| a * b).sum());
            }
        }
        debug_assert_eq!(code.len(), m * self.grid.count());
        code
    }

    pub(crate) fn decode_blocks(&self, code: &[f64]) -> Vec<f64> {
        let m = self.per_block;
        let mut blocks = Vec::with_capacity(self.grid.count() * BLOCK_LEN);
        for y in code.chunks_exact(m) {
            for row in self.decoder.chunks_exact(m) {
                blocks.push(row.iter().zip(y).map(|(a, b)| a * b).sum());
            }
        }
        blocks
    }

    /// `Eᵀ g` per block.
    pub(crate) fn encode_adjoint(&self, grad_code: &[f64]) -> Vec<f64> {
        let m = self.per_block;
        let mut out = vec![0.0; self.grid.count() * BLOCK_LEN];
        for (gx, gy) in out
            .chunks_exact_mut(BLOCK_LEN)
            .zip(grad_code.chunks_exact(m))
        {
            for (row, &g) in self.encoder.chunks_exact(BLOCK_LEN).zip(gy) {
                gx.iter_mut().zip(row).for_each(|(x, e)| *x += e * g);
            }
        }
        out
    }

    /// `Dᵀ g` per block.
    pub(crate) fn decode_adjoint(&self, grad_blocks: &[f64]) -> Vec<f64> {
        let m = self.per_block;
        let mut out = vec![0.0; self.code_len()];
        for (gy, gz) in out
            .chunks_exact_mut(m)
            .zip(grad_blocks.chunks_exact(BLOCK_LEN))
        {
            for (row, &g) in self.decoder.chunks_exact(m).zip(gz) {
                gy.iter_mut().zip(row).for_each(|(y, d)| *y += d * g);
            }
        }
        out
    }

    pub fn encode(&self, img: &ImageTensor) -> Result<Vec<f64>> {
        Ok(self.encode_blocks(&self.grid.gather(img)?))
    }

    pub fn decode_linear(&self, code: &[f64]) -> Result<Vec<f64>> {
        if code.len() != self.code_len() {
            return Err(Error::Dimension(format!(
                "code of length {} for a codec with L={}",
                code.len(),
                self.code_len()
            )));
        }
        Ok(self.grid.scatter(&self.decode_blocks(code)))
    }

    pub fn decode(&self, code: &[f64]) -> Result<ImageTensor> {
        ImageTensor::from_clamped(self.grid.height, self.grid.width, self.decode_linear(code)?)
    }

    fn header(&self) -> WeightsHeader {
        WeightsHeader {
            magic: MAGIC,
            dim: BLOCK_LEN as u16,
            k: self.per_block as u32,
            q: 0,
        }
    }

    fn values(&self) -> Vec<f64> {
        self.encoder.iter().chain(&self.decoder).copied().collect()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        encode_weights(&self.header(), &self.values())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_weights(path, &self.header(), &self.values())
    }

    /// Loads weights for an image geometry; the stored per-block code size
    /// must match `code_len`.
    pub fn load(
        path: impl AsRef<Path>,
        height: usize,
        width: usize,
        code_len: usize,
    ) -> Result<Self> {
        let (h, values) = read_weights(path, MAGIC)?;
        Self::from_parts(h, values, height, width, code_len)
    }

    pub fn from_bytes(bytes: &[u8], height: usize, width: usize, code_len: usize) -> Result<Self> {
        let (h, values) = decode_weights(bytes, MAGIC)?;
        Self::from_parts(h, values, height, width, code_len)
    }

    fn from_parts(
        h: WeightsHeader,
        values: Vec<f64>,
        height: usize,
        width: usize,
        code_len: usize,
    ) -> Result<Self> {
        let mut codec = Self::new(height, width, code_len, LinearInit::Dct)?;
        let m = codec.per_block;
        if h.k as usize != m || usize::from(h.dim) != BLOCK_LEN || values.len() != 2 * m * BLOCK_LEN
        {
            return Err(Error::Weights(format!(
                "codec weights hold {} per block, configuration needs {m}",
                h.k
            )));
        }
        codec.encoder = values[..m * BLOCK_LEN].to_vec();
        codec.decoder = values[m * BLOCK_LEN..].to_vec();
        Ok(codec)
    }
}
