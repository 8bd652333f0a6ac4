//! Codes a residual grid with the mixture model and compares the stream
//! length against uniform tables and the model's cross-entropy.
//!
//! `cargo run --release --example entropy_coding`

use multihop_sim::accoder::{self, codelength_bound, FixedTable, FrequencyTable};
use multihop_sim::config::Config;
use multihop_sim::corpus::synthetic_corpus;
use multihop_sim::entropy::{cell_features, MixtureTables};
use multihop_sim::image::residual;
use multihop_sim::pipeline::run_hop_common;

fn main() -> multihop_sim::Result<()> {
    let cfg = Config::default();
    let codec = cfg.codec()?;
    let rc = cfg.compressor()?;
    let (est, _) = cfg.fit_estimator(&codec, &rc, &cfg.images()?)?;
    let img = &synthetic_corpus(1, cfg.image.height, cfg.image.width, 500)?[0];
    let recon = run_hop_common(img, &codec, &cfg.semantic_link(), 9)?;
    let grid = rc.compress(&residual(img, &recon)?)?;
    let params = est.forward(&cell_features(&recon, rc.block())?)?;

    let bound = codelength_bound(grid.data(), &mut MixtureTables::new(&params)?);
    let stream = accoder::encode(grid.data(), &mut MixtureTables::new(&params)?)?;
    let back = accoder::decode(
        &stream,
        &mut MixtureTables::new(&params)?,
        grid.data().len(),
    )?;
    assert_eq!(back, grid.data());
    let uniform = accoder::encode(
        grid.data(),
        &mut FixedTable(FrequencyTable::uniform(rc.q())?),
    )?;
    println!("{} symbols, Q = {}", grid.data().len(), rc.q());
    println!("model cross-entropy  {bound:8.1} bits");
    println!("model stream         {:8} bits", stream.bit_len());
    println!("uniform stream       {:8} bits", uniform.bit_len());
    Ok(())
}
