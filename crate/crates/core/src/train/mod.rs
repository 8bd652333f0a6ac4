//! Three-stage training: the shared codec on the recursive chain loss, the
//! residual compressor's colour transforms around the frozen codec, and the
//! residual entropy model on single-hop residuals.

mod chain;

pub use chain::{chain_loss, train_stage1, train_stage2, ChainTraining, LossCurve};

use rayon::prelude::*;

use crate::codec::{ResidualCompressor, SemanticCodec};
use crate::entropy::{
    cell_features, fit_estimator, EstimatorTraining, ResidualEstimator, TrainingSample,
};
use crate::error::Result;
use crate::image::{residual, ImageTensor};
use crate::pipeline::{run_hop_common, LinkChannel, SEMANTIC_LINK};
use crate::seed::derive;

/// One single-hop residual grid per `(image, draw)`, paired with features of
/// the hop's reconstruction.
pub fn residual_samples(
    images: &[ImageTensor],
    codec: &SemanticCodec,
    link: &LinkChannel,
    compressor: &ResidualCompressor,
    draws: usize,
    seed: u64,
) -> Result<Vec<TrainingSample>> {
    let jobs: Vec<(usize, usize)> = (0..images.len())
        .flat_map(|i| (0..draws).map(move |d| (i, d)))
        .collect();
    jobs.par_iter()
        .map(|&(i, d)| {
            let img = &images[i];
            let s = derive(seed, &[i as u64, d as u64, SEMANTIC_LINK]);
            let recon = run_hop_common(img, codec, link, s)?;
            Ok(TrainingSample {
                features: cell_features(&recon, compressor.block())?,
                grid: compressor.compress(&residual(img, &recon)?)?,
            })
        })
        .collect()
}

/// Stage 3: fits the estimator on residuals of a single hop. Returns the
/// loss curve in nats per symbol.
pub fn train_stage3(
    estimator: &mut ResidualEstimator,
    samples: &[TrainingSample],
    cfg: &EstimatorTraining,
) -> Result<Vec<f64>> {
    fit_estimator(estimator, samples, cfg)
}
