//! 8×8 block geometry, the orthonormal DCT-II basis and zig-zag order.

use std::sync::OnceLock;

use crate::error::{Error, Result};
use crate::image::{ImageTensor, Shape, CHANNELS};

pub const BLOCK: usize = 8;
pub const BLOCK_LEN: usize = BLOCK * BLOCK;

/// Tiling of an image into 8×8 blocks per channel, padded by edge
/// replication when a side is not a multiple of 8.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockGrid {
    pub height: usize,
    pub width: usize,
    pub rows: usize,
    pub cols: usize,
}

impl BlockGrid {
    pub fn new(height: usize, width: usize) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::Dimension(format!("empty image {height}x{width}")));
        }
        Ok(Self {
            height,
            width,
            rows: height.div_ceil(BLOCK),
            cols: width.div_ceil(BLOCK),
        })
    }

    /// Blocks over all channels.
    pub fn count(&self) -> usize {
        CHANNELS * self.rows * self.cols
    }

    pub fn is_exact(&self) -> bool {
        self.height.is_multiple_of(BLOCK) && self.width.is_multiple_of(BLOCK)
    }

    fn check(&self, img: &ImageTensor) -> Result<()> {
        if img.dims() != (self.height, self.width) {
            return Err(Error::Dimension(format!(
                "codec built for {}x{}, got {:?}",
                self.height,
                self.width,
                img.dims()
            )));
        }
        Ok(())
    }

    /// Blocks ordered channel-major, then block row, then block column; pixels
    /// inside a block are row-major.
    pub fn gather(&self, img: &ImageTensor) -> Result<Vec<f64>> {
        self.check(img)?;
        Ok(self.gather_planar(img.data()))
    }

    /// [`gather`](Self::gather) on planar channel-major data of any range.
    pub fn gather_planar(&self, data: &[f64]) -> Vec<f64> {
        let (h, w) = (self.height, self.width);
        let mut out = Vec::with_capacity(self.count() * BLOCK_LEN);
        for c in 0..CHANNELS {
            for br in 0..self.rows {
                for bc in 0..self.cols {
                    for i in 0..BLOCK {
                        let u = (br * BLOCK + i).min(h - 1);
                        for j in 0..BLOCK {
                            let v = (bc * BLOCK + j).min(w - 1);
                            out.push(data[(c * h + u) * w + v]);
                        }
                    }
                }
            }
        }
        out
    }

    /// Inverse of [`gather`](Self::gather), dropping padded pixels.
    pub fn scatter(&self, blocks: &[f64]) -> Vec<f64> {
        let (h, w) = (self.height, self.width);
        let mut out = vec![0.0; CHANNELS * h * w];
        let mut idx = 0;
        for c in 0..CHANNELS {
            for br in 0..self.rows {
                for bc in 0..self.cols {
                    for i in 0..BLOCK {
                        for j in 0..BLOCK {
                            let (u, v) = (br * BLOCK + i, bc * BLOCK + j);
                            if u < h && v < w {
                                out[(c * h + u) * w + v] = blocks[idx];
                            }
                            idx += 1;
                        }
                    }
                }
            }
        }
        out
    }
}

/// Row `z` is the basis image of the `z`-th coefficient in zig-zag order,
/// flattened row-major.
pub fn dct_basis() -> &'static [[f64; BLOCK_LEN]; BLOCK_LEN] {
    static BASIS: OnceLock<[[f64; BLOCK_LEN]; BLOCK_LEN]> = OnceLock::new();
    BASIS.get_or_init(|| {
        let d = |k: usize, n: usize| {
            let alpha = if k == 0 {
                (1.0 / BLOCK as f64).sqrt()
            } else {
                (2.0 / BLOCK as f64).sqrt()
            };
            alpha
                * (std::f64::consts::PI * (2 * n + 1) as f64 * k as f64 / (2 * BLOCK) as f64).cos()
        };
        let mut basis = [[0.0; BLOCK_LEN]; BLOCK_LEN];
        for (z, &(k1, k2)) in zigzag().iter().enumerate() {
            for n1 in 0..BLOCK {
                for n2 in 0..BLOCK {
                    basis[z][n1 * BLOCK + n2] = d(k1, n1) * d(k2, n2);
                }
            }
        }
        basis
    })
}

/// JPEG zig-zag scan of an 8×8 block as (row, column) pairs.
pub fn zigzag() -> [(usize, usize); BLOCK_LEN] {
    let mut order = [(0, 0); BLOCK_LEN];
    let mut i = 0;
    for s in 0..2 * BLOCK - 1 {
        let lo = s.saturating_sub(BLOCK - 1);
        let hi = s.min(BLOCK - 1);
        if s % 2 == 0 {
            for r in (lo..=hi).rev() {
                order[i] = (r, s - r);
                i += 1;
            }
        } else {
            for r in lo..=hi {
                order[i] = (r, s - r);
                i += 1;
            }
        }
    }
    order
}
