use std::path::Path;

use crate::entropy::SymbolGrid;
use crate::error::{Error, Result};
use crate::image::{ResidualTensor, Shape, CHANNELS};
use crate::weights::{decode_weights, encode_weights, read_weights, write_weights, WeightsHeader};

const MAGIC: [u8; 4] = *b"MHRC";

/// `x ↦ M·x + b` on the three colour values of a cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ColorAffine {
    pub matrix: [[f64; 3]; 3],
    pub offset: [f64; 3],
}

impl ColorAffine {
    pub const IDENTITY: Self = Self {
        matrix: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
        offset: [0.0; 3],
    };

    pub fn apply(&self, x: [f64; 3]) -> [f64; 3] {
        let mut y = self.offset;
        for (yi, row) in y.iter_mut().zip(&self.matrix) {
            *yi += row.iter().zip(&x).map(|(a, b)| a * b).sum::<f64>();
        }
        y
    }

    pub(crate) fn to_vec(self) -> Vec<f64> {
        self.matrix
            .iter()
            .flatten()
            .chain(&self.offset)
            .copied()
            .collect()
    }

    pub(crate) fn from_slice(v: &[f64]) -> Self {
        let mut a = Self::IDENTITY;
        for i in 0..3 {
            for j in 0..3 {
                a.matrix[i][j] = v[3 * i + j];
            }
            a.offset[i] = v[9 + i];
        }
        a
    }
}

/// Block-mean residual compressor: `d × d` means per channel, an optional
/// colour transform, and a uniform quantizer over `[-range, range]` with `Q`
/// levels (level `(Q-1)/2` is exactly zero for odd `Q`). Decompression
/// dequantizes, applies the post transform and upsamples by repetition.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualCompressor {
    block: usize,
    q: usize,
    range: f64,
    pub pre: ColorAffine,
    pub post: ColorAffine,
}

impl ResidualCompressor {
    pub fn new(block: usize, q: usize, range: f64) -> Result<Self> {
        if block == 0 || q < 2 || !(range > 0.0 && range.is_finite()) {
            return Err(Error::Config(format!(
                "residual compressor needs d ≥ 1, Q ≥ 2, range > 0 (got {block}, {q}, {range})"
            )));
        }
        Ok(Self {
            block,
            q,
            range,
            pre: ColorAffine::IDENTITY,
            post: ColorAffine::IDENTITY,
        })
    }

    pub fn block(&self) -> usize {
        self.block
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn range(&self) -> f64 {
        self.range
    }

    pub fn step(&self) -> f64 {
        2.0 * self.range / (self.q - 1) as f64
    }

    pub fn grid_dims(&self, height: usize, width: usize) -> (usize, usize) {
        (height.div_ceil(self.block), width.div_ceil(self.block))
    }

    pub fn quantize(&self, x: f64) -> u32 {
        let t = ((x + self.range) / self.step()).round();
        t.clamp(0.0, (self.q - 1) as f64) as u32
    }

    pub fn dequantize(&self, s: u32) -> f64 {
        f64::from(s) * self.step() - self.range
    }

    /// Per-cell channel means, channel-major then row-major.
    pub fn block_means(&self, r: &ResidualTensor) -> Vec<f64> {
        let (h, w) = r.dims();
        let (rows, cols) = self.grid_dims(h, w);
        let mut out = Vec::with_capacity(CHANNELS * rows * cols);
        for c in 0..CHANNELS {
            for br in 0..rows {
                for bc in 0..cols {
                    let (u0, u1) = (br * self.block, ((br + 1) * self.block).min(h));
                    let (v0, v1) = (bc * self.block, ((bc + 1) * self.block).min(w));
                    let mut s = 0.0;
                    for u in u0..u1 {
                        for v in v0..v1 {
                            s += r.get(c, u, v);
                        }
                    }
                    out.push(s / ((u1 - u0) * (v1 - v0)) as f64);
                }
            }
        }
        out
    }

    pub fn compress(&self, r: &ResidualTensor) -> Result<SymbolGrid> {
        let (rows, cols) = self.grid_dims(r.height(), r.width());
        let cells = rows * cols;
        let means = self.block_means(r);
        let mut data = vec![0u32; CHANNELS * cells];
        for cell in 0..cells {
            let v = self
                .pre
                .apply([means[cell], means[cells + cell], means[2 * cells + cell]]);
            for c in 0..CHANNELS {
                data[c * cells + cell] = self.quantize(v[c]);
            }
        }
        SymbolGrid::new(self.q, rows, cols, data)
    }

    /// Per-cell reconstructed values before upsampling, channel-major.
    pub fn cell_values(&self, grid: &SymbolGrid) -> Vec<f64> {
        let cells = grid.cells();
        let mut out = vec![0.0; CHANNELS * cells];
        for cell in 0..cells {
            let v = self.post.apply([
                self.dequantize(grid.get(0, cell)),
                self.dequantize(grid.get(1, cell)),
                self.dequantize(grid.get(2, cell)),
            ]);
            for c in 0..CHANNELS {
                out[c * cells + cell] = v[c].clamp(-1.0, 1.0);
            }
        }
        out
    }

    pub fn decompress(
        &self,
        grid: &SymbolGrid,
        height: usize,
        width: usize,
    ) -> Result<ResidualTensor> {
        let (rows, cols) = self.grid_dims(height, width);
        if (grid.rows(), grid.cols()) != (rows, cols) || grid.q() != self.q {
            return Err(Error::Dimension(format!(
                "grid {}x{} (Q={}) does not match {rows}x{cols} (Q={})",
                grid.rows(),
                grid.cols(),
                grid.q(),
                self.q
            )));
        }
        let values = self.cell_values(grid);
        let cells = rows * cols;
        let mut data = vec![0.0; CHANNELS * height * width];
        for c in 0..CHANNELS {
            for u in 0..height {
                for v in 0..width {
                    let cell = (u / self.block) * cols + v / self.block;
                    data[(c * height + u) * width + v] = values[c * cells + cell];
                }
            }
        }
        ResidualTensor::new(height, width, data)
    }

    fn header(&self) -> WeightsHeader {
        WeightsHeader {
            magic: MAGIC,
            dim: self.block as u16,
            k: 0,
            q: self.q as u32,
        }
    }

    fn values(&self) -> Vec<f64> {
        let mut v = vec![self.range];
        v.extend(self.pre.to_vec());
        v.extend(self.post.to_vec());
        v
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        encode_weights(&self.header(), &self.values())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_weights(path, &self.header(), &self.values())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let (h, values) = read_weights(path, MAGIC)?;
        Self::from_parts(h, &values)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (h, values) = decode_weights(bytes, MAGIC)?;
        Self::from_parts(h, &values)
    }

    fn from_parts(h: WeightsHeader, values: &[f64]) -> Result<Self> {
        if values.len() != 25 {
            return Err(Error::Weights(format!(
                "compressor needs 25 values, got {}",
                values.len()
            )));
        }
        let mut rc = Self::new(usize::from(h.dim), h.q as usize, values[0])?;
        rc.pre = ColorAffine::from_slice(&values[1..13]);
        rc.post = ColorAffine::from_slice(&values[13..25]);
        Ok(rc)
    }
}
