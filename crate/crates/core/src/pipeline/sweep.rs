use rayon::prelude::*;

use super::{run_multihop, CbrAccounting, ChainConfig, CsvRow};
use crate::codec::{BlockDct, SemanticCodec};
use crate::error::{Error, Result};
use crate::image::ImageTensor;
use crate::seed::derive;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    /// Grid values are the SNR in dB of both links.
    Snr,
    /// Grid values are the semantic-link bandwidth ratio `L / (H·W·3)`;
    /// needs the block-DCT codec.
    Cbr,
    /// Grid values are hop counts.
    Hops,
}

impl SweepAxis {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "snr" => Some(Self::Snr),
            "cbr" => Some(Self::Cbr),
            "hops" => Some(Self::Hops),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub experiment_id: String,
    pub axis: SweepAxis,
    pub grid: Vec<f64>,
    pub trials: usize,
    pub seed: u64,
    pub accounting: CbrAccounting,
}

fn configure(
    template: &ChainConfig,
    axis: SweepAxis,
    value: f64,
    img: &ImageTensor,
) -> Result<ChainConfig> {
    let mut cfg = template.clone();
    match axis {
        SweepAxis::Snr => {
            cfg.semantic.snr_db = value;
            if let Some(link) = cfg.residual.as_mut() {
                link.channel.snr_db = value;
            }
        }
        SweepAxis::Hops => {
            if !(value >= 1.0 && value.fract() == 0.0) {
                return Err(Error::Config(format!(
                    "hop count {value} is not a positive integer"
                )));
            }
            cfg.hops = value as usize;
        }
        SweepAxis::Cbr => {
            if !matches!(cfg.codec, SemanticCodec::BlockDct(_)) {
                return Err(Error::Config(
                    "a bandwidth sweep needs the block_dct codec".into(),
                ));
            }
            let reals = (value * img.len() as f64 / 2.0).round() as usize * 2;
            cfg.codec = SemanticCodec::BlockDct(BlockDct::new(img.height(), img.width(), reals)?);
        }
    }
    Ok(cfg)
}

/// Runs every `(grid value, trial)` pair, in parallel on the current rayon
/// pool. Trial `t` uses image `t mod images.len()` and the seed
/// `derive(spec.seed, [t])` at every grid value. Rows come back ordered by
/// grid point, trial and hop.
pub fn sweep(
    spec: &SweepSpec,
    template: &ChainConfig,
    images: &[ImageTensor],
) -> Result<Vec<CsvRow>> {
    if spec.grid.is_empty() || spec.trials == 0 || images.is_empty() {
        return Err(Error::Config(
            "a sweep needs grid values, trials and images".into(),
        ));
    }
    if spec.experiment_id.contains([',', '"', '\n']) {
        return Err(Error::Config(format!(
            "experiment id {:?} is not CSV-safe",
            spec.experiment_id
        )));
    }
    let jobs: Vec<(f64, usize)> = spec
        .grid
        .iter()
        .flat_map(|&v| (0..spec.trials).map(move |t| (v, t)))
        .collect();
    let chunks: Vec<Result<Vec<CsvRow>>> = jobs
        .par_iter()
        .map(|&(value, trial)| {
            let img = &images[trial % images.len()];
            let cfg = configure(template, spec.axis, value, img)?;
            let trial_seed = derive(spec.seed, &[trial as u64]);
            let out = run_multihop(img, &cfg, trial_seed)?;
            Ok(out
                .reports
                .iter()
                .map(|r| {
                    CsvRow::from_report(
                        &spec.experiment_id,
                        value,
                        trial_seed,
                        r,
                        spec.accounting,
                        img.height(),
                        img.width(),
                    )
                })
                .collect())
        })
        .collect();
    let mut rows = Vec::new();
    for c in chunks {
        rows.extend(c?);
    }
    Ok(rows)
}
