//! Single hops, the multi-hop chain with optional residual compensation,
//! bandwidth accounting and parameter sweeps.

mod report;
mod sweep;

pub use report::{read_csv, write_csv, CsvRow, SCHEMA_VERSION};
pub use sweep::{sweep, SweepAxis, SweepSpec};

use std::collections::BTreeSet;

use num_complex::Complex64;

use crate::accoder::{self, Bitstream};
use crate::channel::{
    emulated_channel, mmse_equalize_unbiased, rayleigh_transmit, snr_to_noise_variance,
    transmit_real, ChannelRealization, SymbolVector,
};
use crate::codec::{ResidualCompressor, SemanticCodec};
use crate::entropy::{cell_features, MixtureTables, ResidualEstimator};
use crate::error::{Error, Result};
use crate::image::{compensate, ms_ssim, psnr, residual, ImageTensor};
use crate::modem::{ResidualModem, HEADER_BITS};
use crate::seed::derive;

/// Seed-path label of the semantic link.
pub const SEMANTIC_LINK: u64 = 1;
/// Seed-path label of the residual link.
pub const RESIDUAL_LINK: u64 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Fading {
    #[default]
    Rayleigh,
    /// Unit gains with noise.
    Awgn,
    /// Unit gains, no noise.
    Ideal,
}

/// Fading model and SNR of one link.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkChannel {
    pub fading: Fading,
    pub snr_db: f64,
}

impl LinkChannel {
    pub fn rayleigh(snr_db: f64) -> Self {
        Self {
            fading: Fading::Rayleigh,
            snr_db,
        }
    }

    pub fn ideal() -> Self {
        Self {
            fading: Fading::Ideal,
            snr_db: f64::INFINITY,
        }
    }

    pub fn realize(&self, len: usize, seed: u64) -> Result<ChannelRealization> {
        let var = snr_to_noise_variance(self.snr_db);
        match self.fading {
            Fading::Rayleigh => ChannelRealization::rayleigh(len, var, seed),
            Fading::Awgn => ChannelRealization::awgn(len, var, seed),
            Fading::Ideal => ChannelRealization::awgn(len, 1.0, seed)?
                .noiseless()
                .with_noise_variance(0.0),
        }
    }
}

/// Receiver-side corruption used to exercise the failure path.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FaultInjection {
    /// Negate the first `n` received residual-link symbols before detection.
    NegateSymbols(usize),
}

/// Everything the parallel link needs: compressor, entropy model, modem and
/// its channel.
#[derive(Debug, Clone)]
pub struct ResidualLink {
    pub compressor: ResidualCompressor,
    pub estimator: ResidualEstimator,
    pub modem: ResidualModem,
    pub channel: LinkChannel,
    pub fault: Option<FaultInjection>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FrameStatus {
    Delivered,
    CrcFailed,
    Disabled,
}

impl FrameStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Delivered => "delivered",
            Self::CrcFailed => "crc_failed",
            Self::Disabled => "disabled",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [Self::Delivered, Self::CrcFailed, Self::Disabled]
            .into_iter()
            .find(|v| v.as_str() == s)
    }
}

/// How residual-link usage enters the bandwidth ratio.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CbrAccounting {
    /// Every transmitted channel symbol, parity included.
    #[default]
    ChannelSymbols,
    /// Framed payload bits mapped onto QAM symbols without channel coding.
    Payload,
}

/// `(L + L_r) / (H·W·3)` with both terms counted in real channel uses.
pub fn cbr(semantic_reals: usize, residual_reals: usize, height: usize, width: usize) -> f64 {
    (semantic_reals + residual_reals) as f64 / (3 * height * width) as f64
}

/// Quality and cost of one hop. PSNR and MS-SSIM compare against the image
/// that entered the first hop.
#[derive(Debug, Clone, PartialEq)]
pub struct HopReport {
    pub hop: usize,
    pub psnr_recon_db: f64,
    pub psnr_comp_db: f64,
    pub msssim_recon: Option<f64>,
    pub msssim_comp: Option<f64>,
    pub semantic_reals: usize,
    pub residual_channel_symbols: usize,
    /// Arithmetic-coded bits plus the frame header; zero when disabled.
    pub residual_payload_bits: usize,
    pub residual_bits_per_symbol: usize,
    pub status: FrameStatus,
}

impl HopReport {
    /// Real-valued channel uses charged to the residual link.
    pub fn residual_reals(&self, accounting: CbrAccounting) -> usize {
        match accounting {
            CbrAccounting::ChannelSymbols => 2 * self.residual_channel_symbols,
            CbrAccounting::Payload if self.residual_payload_bits == 0 => 0,
            CbrAccounting::Payload => {
                2 * self
                    .residual_payload_bits
                    .div_ceil(self.residual_bits_per_symbol)
            }
        }
    }

    pub fn cbr(&self, accounting: CbrAccounting, height: usize, width: usize) -> f64 {
        cbr(
            self.semantic_reals,
            self.residual_reals(accounting),
            height,
            width,
        )
    }
}

/// Per-hop seeds of both links for a trial.
pub fn hop_seeds(trial_seed: u64, hop: usize) -> (u64, u64) {
    (
        derive(trial_seed, &[hop as u64, SEMANTIC_LINK]),
        derive(trial_seed, &[hop as u64, RESIDUAL_LINK]),
    )
}

fn semantic_pass(
    img: &ImageTensor,
    codec: &SemanticCodec,
    ch: &ChannelRealization,
) -> Result<ImageTensor> {
    let code = codec.encode(img)?;
    codec.decode(&transmit_real(&code, ch)?)
}

/// Encode, send over the semantic link and decode: `ŝ = f_d(E(f_e(s)))`.
pub fn run_hop_common(
    img: &ImageTensor,
    codec: &SemanticCodec,
    link: &LinkChannel,
    seed: u64,
) -> Result<ImageTensor> {
    let ch = link.realize(codec.code_len() / 2, seed)?;
    semantic_pass(img, codec, &ch)
}

/// Output of one hop.
#[derive(Debug, Clone)]
pub struct HopOutcome {
    /// Semantic-link reconstruction `ŝ`.
    pub recon: ImageTensor,
    /// Compensated output `s̃`, equal to `recon` unless a frame was delivered.
    pub output: ImageTensor,
    pub status: FrameStatus,
    pub residual_channel_symbols: usize,
    pub residual_payload_bits: usize,
}

/// A hop with the parallel residual link. The transmitter replays the
/// semantic channel from its shared seed, codes `s - š` with tables
/// predicted from `š`, and the receiver adds the decoded residual to `ŝ`
/// when the frame passes its CRC.
pub fn run_hop_compensated(
    img: &ImageTensor,
    codec: &SemanticCodec,
    link: &LinkChannel,
    residual_link: &ResidualLink,
    semantic_seed: u64,
    residual_seed: u64,
) -> Result<HopOutcome> {
    let ch = link.realize(codec.code_len() / 2, semantic_seed)?;
    let recon = semantic_pass(img, codec, &ch)?;

    // Transmitter side.
    let emulated = semantic_pass(img, codec, &emulated_channel(&ch))?;
    let rc = &residual_link.compressor;
    let grid = rc.compress(&residual(img, &emulated)?)?;
    let tx_params = residual_link
        .estimator
        .forward(&cell_features(&emulated, rc.block())?)?;
    let stream = accoder::encode(grid.data(), &mut MixtureTables::new(&tx_params)?)?;
    let payload = stream.to_bits();
    let modem = &residual_link.modem;
    let symbols = modem.modulate_frame(&payload)?;
    let sent = symbols.len();
    let payload_bits = payload.len() + HEADER_BITS;

    // Residual channel and receiver side.
    let rch = residual_link.channel.realize(sent, residual_seed)?;
    let mut received = rayleigh_transmit(&symbols, &rch)?;
    if let Some(FaultInjection::NegateSymbols(n)) = residual_link.fault {
        received.0.iter_mut().take(n).for_each(|z| *z = -*z);
    }
    let (eq, var) = mmse_equalize_unbiased(&received, &rch)?;
    let var: Vec<f64> = var.iter().map(|v| v.min(1e12)).collect();
    let outcome = modem.demodulate_frame(
        &SymbolVector(eq.0.iter().map(|z| finite(*z)).collect()),
        &var,
    )?;

    let delivered = match outcome.payload {
        Ok(bits) => {
            let rx_params = residual_link
                .estimator
                .forward(&cell_features(&recon, rc.block())?)?;
            let stream = Bitstream::from_bits(&bits);
            accoder::decode(
                &stream,
                &mut MixtureTables::new(&rx_params)?,
                grid.data().len(),
            )
            .ok()
            .map(|symbols| -> Result<ImageTensor> {
                let rx_grid =
                    crate::entropy::SymbolGrid::new(grid.q(), grid.rows(), grid.cols(), symbols)?;
                let r_hat = rc.decompress(&rx_grid, img.height(), img.width())?;
                compensate(&recon, &r_hat)
            })
            .transpose()?
        }
        Err(_) => None,
    };
    let (output, status) = match delivered {
        Some(out) => (out, FrameStatus::Delivered),
        None => (recon.clone(), FrameStatus::CrcFailed),
    };
    Ok(HopOutcome {
        recon,
        output,
        status,
        residual_channel_symbols: sent,
        residual_payload_bits: payload_bits,
    })
}

fn finite(z: Complex64) -> Complex64 {
    if z.re.is_finite() && z.im.is_finite() {
        z
    } else {
        Complex64::new(0.0, 0.0)
    }
}

/// Hops (1-based) that use the residual link.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub enum Schedule {
    #[default]
    All,
    None,
    Hops(BTreeSet<usize>),
}

impl Schedule {
    pub fn contains(&self, hop: usize) -> bool {
        match self {
            Self::All => true,
            Self::None => false,
            Self::Hops(set) => set.contains(&hop),
        }
    }

    /// `"all"`, `"none"`, or comma-separated hops and inclusive ranges such
    /// as `"1-10,21-30"`.
    pub fn parse(text: &str) -> Result<Self> {
        let t = text.trim();
        match t {
            "all" => return Ok(Self::All),
            "none" | "" => return Ok(Self::None),
            _ => {}
        }
        let bad = || Error::Config(format!("invalid compensation schedule {text:?}"));
        let mut set = BTreeSet::new();
        for part in t.split(',') {
            let part = part.trim();
            let (a, b) = match part.split_once('-') {
                Some((a, b)) => (a.trim(), b.trim()),
                None => (part, part),
            };
            let a: usize = a.parse().map_err(|_| bad())?;
            let b: usize = b.parse().map_err(|_| bad())?;
            if a == 0 || b < a {
                return Err(bad());
            }
            set.extend(a..=b);
        }
        Ok(Self::Hops(set))
    }

    pub fn check(&self, hops: usize) -> Result<()> {
        if let Self::Hops(set) = self {
            if let Some(&h) = set.iter().find(|&&h| h > hops) {
                return Err(Error::Config(format!(
                    "schedule names hop {h} of a {hops}-hop chain"
                )));
            }
        }
        Ok(())
    }
}

/// A chain of identical hops sharing one codec.
#[derive(Debug, Clone)]
pub struct ChainConfig {
    pub hops: usize,
    pub codec: SemanticCodec,
    pub semantic: LinkChannel,
    pub residual: Option<ResidualLink>,
    pub schedule: Schedule,
    /// Compute MS-SSIM for every hop (the expensive part of a report).
    pub ms_ssim: bool,
}

#[derive(Debug, Clone)]
pub struct ChainOutcome {
    pub output: ImageTensor,
    pub reports: Vec<HopReport>,
}

/// Runs `cfg.hops` hops; hop `n+1` receives hop `n`'s final output. Channel
/// realizations come from `hop_seeds(trial_seed, n)`.
pub fn run_multihop(img: &ImageTensor, cfg: &ChainConfig, trial_seed: u64) -> Result<ChainOutcome> {
    if cfg.hops == 0 {
        return Err(Error::Config("hop count must be at least 1".into()));
    }
    cfg.schedule.check(cfg.hops)?;
    let mut current = img.clone();
    let mut reports = Vec::with_capacity(cfg.hops);
    for hop in 1..=cfg.hops {
        let (sem_seed, res_seed) = hop_seeds(trial_seed, hop);
        let outcome = match (&cfg.residual, cfg.schedule.contains(hop)) {
            (Some(link), true) => run_hop_compensated(
                &current,
                &cfg.codec,
                &cfg.semantic,
                link,
                sem_seed,
                res_seed,
            )?,
            _ => {
                let recon = run_hop_common(&current, &cfg.codec, &cfg.semantic, sem_seed)?;
                HopOutcome {
                    output: recon.clone(),
                    recon,
                    status: FrameStatus::Disabled,
                    residual_channel_symbols: 0,
                    residual_payload_bits: 0,
                }
            }
        };
        let metric = |x: &ImageTensor| {
            if cfg.ms_ssim {
                ms_ssim(img, x).ok()
            } else {
                None
            }
        };
        reports.push(HopReport {
            hop,
            psnr_recon_db: psnr(img, &outcome.recon)?,
            psnr_comp_db: psnr(img, &outcome.output)?,
            msssim_recon: metric(&outcome.recon),
            msssim_comp: metric(&outcome.output),
            semantic_reals: cfg.codec.code_len(),
            residual_channel_symbols: outcome.residual_channel_symbols,
            residual_payload_bits: outcome.residual_payload_bits,
            residual_bits_per_symbol: cfg
                .residual
                .as_ref()
                .map_or(1, |l| l.modem.qam().bits_per_symbol()),
            status: outcome.status,
        });
        current = outcome.output;
    }
    Ok(ChainOutcome {
        output: current,
        reports,
    })
}
