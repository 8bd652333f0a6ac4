//! Complex symbol packing, power normalization, flat Rayleigh fading with
//! AWGN, and per-symbol MMSE equalization.

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

const GAIN_STREAM: u64 = 0;
const NOISE_STREAM: u64 = 1;

/// Complex baseband symbols.
#[derive(Debug, Clone, PartialEq)]
pub struct SymbolVector(pub Vec<Complex64>);

impl SymbolVector {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[Complex64] {
        &self.0
    }

    /// `(1/L) Σ |x_i|²`.
    pub fn average_power(&self) -> f64 {
        if self.0.is_empty() {
            return 0.0;
        }
        self.0.iter().map(|z| z.norm_sqr()).sum::<f64>() / self.0.len() as f64
    }
}

/// Pairs `(x[2i], x[2i+1])` become `x[2i] + j·x[2i+1]`.
pub fn pack_complex(real: &[f64]) -> Result<SymbolVector> {
    if !real.len().is_multiple_of(2) {
        return Err(Error::Dimension(format!(
            "cannot pack odd length {} into complex symbols",
            real.len()
        )));
    }
    Ok(SymbolVector(
        real.chunks_exact(2)
            .map(|p| Complex64::new(p[0], p[1]))
            .collect(),
    ))
}

pub fn unpack_complex(symbols: &SymbolVector) -> Vec<f64> {
    symbols.0.iter().flat_map(|z| [z.re, z.im]).collect()
}

/// Scales to unit average power; returns the factor that undoes it.
pub fn power_normalize(x: &SymbolVector) -> Result<(SymbolVector, f64)> {
    let p = x.average_power();
    if p == 0.0 || !p.is_finite() {
        return Err(Error::Degenerate(format!(
            "cannot normalize symbol vector with power {p}"
        )));
    }
    let scale = p.sqrt();
    Ok((SymbolVector(x.0.iter().map(|z| z / scale).collect()), scale))
}

/// Linear noise variance for a unit-power signal at the given SNR.
pub fn snr_to_noise_variance(snr_db: f64) -> f64 {
    10f64.powf(-snr_db / 10.0)
}

/// One use of a block-fading channel: a gain per symbol, the noise level
/// and the seed that fixes the noise draw.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelRealization {
    gains: Vec<Complex64>,
    noise_variance: f64,
    seed: u64,
    noiseless: bool,
}

impl ChannelRealization {
    /// Gains i.i.d. CN(0,1), drawn from `seed`.
    pub fn rayleigh(len: usize, noise_variance: f64, seed: u64) -> Result<Self> {
        check_noise(noise_variance, false)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(GAIN_STREAM);
        let normal = Normal::new(0.0, std::f64::consts::FRAC_1_SQRT_2).expect("valid sigma");
        let gains = (0..len)
            .map(|_| Complex64::new(normal.sample(&mut rng), normal.sample(&mut rng)))
            .collect();
        Ok(Self {
            gains,
            noise_variance,
            seed,
            noiseless: false,
        })
    }

    /// All gains equal to one (plain AWGN).
    pub fn awgn(len: usize, noise_variance: f64, seed: u64) -> Result<Self> {
        Self::from_gains(vec![Complex64::new(1.0, 0.0); len], noise_variance, seed)
    }

    pub fn from_gains(gains: Vec<Complex64>, noise_variance: f64, seed: u64) -> Result<Self> {
        check_noise(noise_variance, false)?;
        Ok(Self {
            gains,
            noise_variance,
            seed,
            noiseless: false,
        })
    }

    /// Suppresses the additive noise draw. The equalizer still uses
    /// `noise_variance`, which may then be zero.
    pub fn noiseless(mut self) -> Self {
        self.noiseless = true;
        self
    }

    /// Replaces the noise level of a noiseless realization.
    pub fn with_noise_variance(mut self, noise_variance: f64) -> Result<Self> {
        check_noise(noise_variance, self.noiseless)?;
        self.noise_variance = noise_variance;
        Ok(self)
    }

    pub fn gains(&self) -> &[Complex64] {
        &self.gains
    }

    pub fn noise_variance(&self) -> f64 {
        self.noise_variance
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn is_noiseless(&self) -> bool {
        self.noiseless
    }

    pub fn len(&self) -> usize {
        self.gains.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gains.is_empty()
    }

    /// Per-symbol MMSE gain `|h|² / (|h|² + σ²)`.
    pub fn mmse_gains(&self) -> Vec<f64> {
        self.gains
            .iter()
            .map(|h| {
                let p = h.norm_sqr();
                if p == 0.0 {
                    0.0
                } else {
                    p / (p + self.noise_variance)
                }
            })
            .collect()
    }

    fn check_len(&self, n: usize) -> Result<()> {
        if n != self.gains.len() {
            return Err(Error::Dimension(format!(
                "{n} symbols on a channel with {} gains",
                self.gains.len()
            )));
        }
        Ok(())
    }
}

fn check_noise(noise_variance: f64, noiseless: bool) -> Result<()> {
    let ok = noise_variance.is_finite()
        && (noise_variance > 0.0 || (noiseless && noise_variance == 0.0));
    if !ok {
        return Err(Error::Config(format!(
            "noise variance {noise_variance} must be positive (zero only when noiseless)"
        )));
    }
    Ok(())
}

impl ChannelRealization {
    /// The additive noise `n_i` that [`rayleigh_transmit`] applies.
    pub fn noise(&self) -> Vec<Complex64> {
        if self.noiseless {
            return vec![Complex64::new(0.0, 0.0); self.gains.len()];
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(NOISE_STREAM);
        let normal = Normal::new(0.0, (self.noise_variance / 2.0).sqrt()).expect("valid sigma");
        (0..self.gains.len())
            .map(|_| Complex64::new(normal.sample(&mut rng), normal.sample(&mut rng)))
            .collect()
    }

    /// Transmit-then-equalize as an affine map: `ŷ_i = g_i x_i + e_i` with the
    /// real MMSE gain `g_i` and the filtered noise `e_i`.
    pub fn equalized_affine(&self) -> (Vec<f64>, Vec<Complex64>) {
        let gains = self.mmse_gains();
        let offsets = self
            .noise()
            .iter()
            .zip(&self.gains)
            .map(|(n, h)| {
                let d = h.norm_sqr() + self.noise_variance;
                if d == 0.0 {
                    Complex64::new(0.0, 0.0)
                } else {
                    h.conj() * n / d
                }
            })
            .collect();
        (gains, offsets)
    }
}

/// `z_i = h_i x_i + n_i`, `n_i ~ CN(0, σ²)` drawn from the realization seed.
pub fn rayleigh_transmit(x: &SymbolVector, ch: &ChannelRealization) -> Result<SymbolVector> {
    ch.check_len(x.len())?;
    Ok(SymbolVector(
        x.0.iter()
            .zip(&ch.gains)
            .zip(ch.noise())
            .map(|((s, h), n)| h * s + n)
            .collect(),
    ))
}

/// `ŷ_i = conj(h_i) z_i / (|h_i|² + σ²)`.
pub fn mmse_equalize(received: &SymbolVector, ch: &ChannelRealization) -> Result<SymbolVector> {
    ch.check_len(received.len())?;
    Ok(SymbolVector(
        received
            .0
            .iter()
            .zip(&ch.gains)
            .map(|(z, h)| {
                let d = h.norm_sqr() + ch.noise_variance;
                if d == 0.0 {
                    Complex64::new(0.0, 0.0)
                } else {
                    h.conj() * z / d
                }
            })
            .collect(),
    ))
}

/// MMSE output divided by its per-symbol gain, with the resulting noise
/// variance `σ²/|h|²` for each symbol. Feeds soft demodulation.
pub fn mmse_equalize_unbiased(
    received: &SymbolVector,
    ch: &ChannelRealization,
) -> Result<(SymbolVector, Vec<f64>)> {
    let eq = mmse_equalize(received, ch)?;
    let gains = ch.mmse_gains();
    let mut out = Vec::with_capacity(eq.len());
    let mut var = Vec::with_capacity(eq.len());
    for ((y, g), h) in eq.0.iter().zip(&gains).zip(&ch.gains) {
        let p = h.norm_sqr();
        if *g == 0.0 {
            out.push(Complex64::new(0.0, 0.0));
            var.push(f64::INFINITY);
        } else {
            out.push(y / g);
            // σ²/(|h|²+σ²) scaled by 1/g; a tiny floor keeps noiseless links finite.
            var.push((ch.noise_variance / p).max(1e-12));
        }
    }
    Ok((SymbolVector(out), var))
}

/// Transmitter-side replica of a channel use: same gains, noise level and
/// seed, hence bit-identical outputs.
pub fn emulated_channel(ch: &ChannelRealization) -> ChannelRealization {
    ch.clone()
}

/// A real code after the full analog link, written as `out = gains ⊙ code + scale · offsets`.
#[derive(Debug, Clone, PartialEq)]
pub struct RealAffine {
    /// MMSE gain of the complex symbol carrying each real entry.
    pub gains: Vec<f64>,
    /// Equalized noise in units of the transmitted (normalized) signal.
    pub offsets: Vec<f64>,
    /// Power-normalization factor of the code; zero for an all-zero code.
    pub scale: f64,
}

impl RealAffine {
    pub fn apply(&self, code: &[f64]) -> Vec<f64> {
        code.iter()
            .zip(&self.gains)
            .zip(&self.offsets)
            .map(|((x, g), e)| g * x + self.scale * e)
            .collect()
    }
}

fn code_scale(code: &[f64]) -> Result<f64> {
    let packed = pack_complex(code)?;
    Ok(packed.average_power().sqrt())
}

/// The affine form of [`transmit_real`] for a given code.
pub fn real_affine(code: &[f64], ch: &ChannelRealization) -> Result<RealAffine> {
    let scale = code_scale(code)?;
    ch.check_len(code.len() / 2)?;
    let (g, e) = ch.equalized_affine();
    Ok(RealAffine {
        gains: g.iter().flat_map(|&g| [g, g]).collect(),
        offsets: e.iter().flat_map(|z| [z.re, z.im]).collect(),
        scale,
    })
}

/// Pack, normalize to unit power, transmit, MMSE-equalize, undo the
/// normalization and unpack. An all-zero code carries no energy and
/// arrives as zeros.
pub fn transmit_real(code: &[f64], ch: &ChannelRealization) -> Result<Vec<f64>> {
    let packed = pack_complex(code)?;
    ch.check_len(packed.len())?;
    if packed.average_power() == 0.0 {
        return Ok(vec![0.0; code.len()]);
    }
    let (x, scale) = power_normalize(&packed)?;
    let y = mmse_equalize(&rayleigh_transmit(&x, ch)?, ch)?;
    Ok(unpack_complex(&SymbolVector(
        y.0.iter().map(|z| z * scale).collect(),
    )))
}
