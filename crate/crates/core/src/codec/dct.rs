use super::blocks::{dct_basis, BlockGrid, BLOCK_LEN};
use crate::error::{Error, Result};
use crate::image::ImageTensor;

/// Zonal block-DCT truncation codec: each 8×8 block keeps its leading
/// zig-zag coefficients, unquantized.
///
/// `L` coefficients are spread as evenly as possible: every block keeps
/// `L / blocks`, and the first `L % blocks` blocks (channel-major order) keep
/// one more.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockDct {
    grid: BlockGrid,
    code_len: usize,
}

impl BlockDct {
    pub fn new(height: usize, width: usize, code_len: usize) -> Result<Self> {
        let grid = BlockGrid::new(height, width)?;
        if code_len == 0 || !code_len.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "code length {code_len} must be even and positive"
            )));
        }
        if code_len > grid.count() * BLOCK_LEN || code_len > 3 * height * width {
            return Err(Error::Config(format!(
                "code length {code_len} exceeds the {} available coefficients",
                (grid.count() * BLOCK_LEN).min(3 * height * width)
            )));
        }
        Ok(Self { grid, code_len })
    }

    pub fn code_len(&self) -> usize {
        self.code_len
    }

    pub fn grid(&self) -> BlockGrid {
        self.grid
    }

    /// Coefficients kept by block `b`.
    pub fn kept(&self, b: usize) -> usize {
        let n = self.grid.count();
        self.code_len / n + usize::from(b < self.code_len % n)
    }

    pub fn encode(&self, img: &ImageTensor) -> Result<Vec<f64>> {
        Ok(self.encode_blocks(&self.grid.gather(img)?))
    }

    pub(crate) fn encode_blocks(&self, blocks: &[f64]) -> Vec<f64> {
        let basis = dct_basis();
        let mut code = Vec::with_capacity(self.code_len);
        for (b, px) in blocks.chunks_exact(BLOCK_LEN).enumerate() {
            for row in basis.iter().take(self.kept(b)) {
                code.push(row.iter().zip(px).map(|(a, x)| a * x).sum());
            }
        }
        code
    }

    pub(crate) fn decode_blocks(&self, code: &[f64]) -> Vec<f64> {
        let basis = dct_basis();
        let mut blocks = vec![0.0; self.grid.count() * BLOCK_LEN];
        let mut at = 0;
        for (b, px) in blocks.chunks_exact_mut(BLOCK_LEN).enumerate() {
            for row in basis.iter().take(self.kept(b)) {
                let coef = code[at];
                at += 1;
                px.iter_mut().zip(row).for_each(|(p, r)| *p += coef * r);
            }
        }
        blocks
    }

    /// Inverse transform without clamping.
    pub fn decode_linear(&self, code: &[f64]) -> Result<Vec<f64>> {
        if code.len() != self.code_len {
            return Err(Error::Dimension(format!(
                "code of length {} for a codec with L={}",
                code.len(),
                self.code_len
            )));
        }
        Ok(self.grid.scatter(&self.decode_blocks(code)))
    }

    pub fn decode(&self, code: &[f64]) -> Result<ImageTensor> {
        ImageTensor::from_clamped(self.grid.height, self.grid.width, self.decode_linear(code)?)
    }
}
