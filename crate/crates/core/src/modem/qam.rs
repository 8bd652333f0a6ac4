//! Square Gray-mapped QAM with max-log soft demodulation.
//!
//! Each symbol carries `b = log2(M)` bits: the first `b/2` select the
//! in-phase level, the rest the quadrature level. Per axis, a label `g` maps
//! to level index `i = gray⁻¹(g)` and amplitude `(P-1-2i)·norm`, so label 0
//! sits at the most positive amplitude. For 4-QAM, bits `00` map to
//! `(1+j)/√2`.

use num_complex::Complex64;

use crate::channel::SymbolVector;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct QamConstellation {
    order: usize,
    bits_per_axis: usize,
    /// Amplitude per axis label.
    levels: Vec<f64>,
}

fn gray_decode(mut g: usize) -> usize {
    let mut i = g;
    while g > 0 {
        g >>= 1;
        i ^= g;
    }
    i
}

impl QamConstellation {
    pub fn new(order: usize) -> Result<Self> {
        let bits_per_axis = match order {
            4 => 1,
            16 => 2,
            64 => 3,
            _ => return Err(Error::Config(format!("unsupported QAM order {order}"))),
        };
        let p = 1usize << bits_per_axis;
        let norm = (3.0 / (2.0 * ((p * p) as f64 - 1.0))).sqrt();
        let levels = (0..p)
            .map(|label| (p as f64 - 1.0 - 2.0 * gray_decode(label) as f64) * norm)
            .collect();
        Ok(Self {
            order,
            bits_per_axis,
            levels,
        })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn bits_per_symbol(&self) -> usize {
        2 * self.bits_per_axis
    }

    /// Constellation point for a full label (MSB first: I bits then Q bits).
    pub fn point(&self, label: usize) -> Complex64 {
        let mask = (1 << self.bits_per_axis) - 1;
        Complex64::new(
            self.levels[(label >> self.bits_per_axis) & mask],
            self.levels[label & mask],
        )
    }

    pub fn points(&self) -> Vec<Complex64> {
        (0..self.order).map(|l| self.point(l)).collect()
    }

    pub fn modulate(&self, bits: &[u8]) -> Result<SymbolVector> {
        let b = self.bits_per_symbol();
        if !bits.len().is_multiple_of(b) {
            return Err(Error::Dimension(format!(
                "{} bits not divisible by {b} bits per symbol",
                bits.len()
            )));
        }
        Ok(SymbolVector(
            bits.chunks_exact(b)
                .map(|chunk| {
                    let label = chunk
                        .iter()
                        .fold(0usize, |acc, &x| (acc << 1) | usize::from(x & 1));
                    self.point(label)
                })
                .collect(),
        ))
    }

    /// Nearest-point decision, bits MSB first.
    pub fn demodulate_hard(&self, received: &SymbolVector) -> Vec<u8> {
        let llr = self
            .demodulate_llr(received, &vec![1.0; received.len()])
            .expect("unit variance is valid");
        llr.iter().map(|&l| u8::from(l < 0.0)).collect()
    }

    /// Max-log LLRs, positive meaning bit 0 is more likely:
    /// `(min_{x: b=1} |y-x|² - min_{x: b=0} |y-x|²) / N0`.
    ///
    /// Gray labels are separable per axis, so each bit only involves the
    /// axis that carries it.
    pub fn demodulate_llr(&self, received: &SymbolVector, noise_var: &[f64]) -> Result<Vec<f64>> {
        if noise_var.len() != received.len() {
            return Err(Error::Dimension(format!(
                "{} noise variances for {} symbols",
                noise_var.len(),
                received.len()
            )));
        }
        if let Some(v) = noise_var.iter().find(|v| v.is_nan() || **v <= 0.0) {
            return Err(Error::Model(format!("noise variance {v} must be positive")));
        }
        let bpa = self.bits_per_axis;
        let mut out = Vec::with_capacity(received.len() * 2 * bpa);
        for (y, &n0) in received.0.iter().zip(noise_var) {
            for axis in [y.re, y.im] {
                for bit in 0..bpa {
                    let shift = bpa - 1 - bit;
                    let (mut d0, mut d1) = (f64::INFINITY, f64::INFINITY);
                    for (label, &a) in self.levels.iter().enumerate() {
                        let d = (axis - a) * (axis - a);
                        if (label >> shift) & 1 == 0 {
                            d0 = d0.min(d);
                        } else {
                            d1 = d1.min(d);
                        }
                    }
                    out.push((d1 - d0) / n0);
                }
            }
        }
        Ok(out)
    }
}
