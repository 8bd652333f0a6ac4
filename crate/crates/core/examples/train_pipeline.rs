//! The three training stages on a small synthetic corpus: the shared linear
//! codec on the chain loss, the residual compressor around it, then the
//! entropy model.
//!
//! `cargo run --release --example train_pipeline`

use multihop_sim::codec::{LinearCodec, LinearInit, ResidualCompressor, SemanticCodec};
use multihop_sim::config::Config;
use multihop_sim::corpus::synthetic_corpus;
use multihop_sim::entropy::ResidualEstimator;
use multihop_sim::train::{
    residual_samples, train_stage1, train_stage2, train_stage3, ChainTraining,
};

fn main() -> multihop_sim::Result<()> {
    let images = synthetic_corpus(16, 64, 64, 1)?;
    let mut linear = LinearCodec::new(64, 64, 768, LinearInit::Random { seed: 1 })?;
    let cfg = ChainTraining {
        steps: 40,
        ..ChainTraining::default()
    };
    let c1 = train_stage1(&mut linear, &images, &cfg)?;
    println!("stage 1: chain loss {:.5} -> {:.5}", c1.initial, c1.last);

    let codec = SemanticCodec::Linear(linear);
    let mut rc = ResidualCompressor::new(16, 129, 0.5)?;
    let c2 = train_stage2(
        &codec,
        &mut rc,
        &images,
        &ChainTraining { steps: 10, ..cfg },
    )?;
    println!(
        "stage 2: compensated chain loss {:.5} -> {:.5}",
        c2.initial, c2.last
    );

    let defaults = Config::default();
    let samples = residual_samples(&images, &codec, &defaults.semantic_link(), &rc, 2, 3)?;
    let mut est = ResidualEstimator::initial(5, 129)?;
    let c3 = train_stage3(&mut est, &samples, &defaults.stage3_training())?;
    let nats = c3.last().copied().unwrap_or(f64::NAN);
    println!(
        "stage 3: {:.3} bits/symbol (uniform coding needs {:.3})",
        nats / std::f64::consts::LN_2,
        129f64.log2()
    );
    Ok(())
}
