//! One hop over a Rayleigh link at several SNRs, with and without the
//! residual link.
//!
//! `cargo run --release --example single_hop`

use multihop_sim::config::Config;
use multihop_sim::corpus::synthetic_image;
use multihop_sim::image::psnr;
use multihop_sim::pipeline::{run_hop_common, run_hop_compensated};

fn main() -> multihop_sim::Result<()> {
    let cfg = Config::default();
    let img = synthetic_image(cfg.image.height, cfg.image.width, 3)?;
    let chain = cfg.chain(&cfg.images()?)?;
    let link = chain
        .residual
        .as_ref()
        .expect("residual link is on by default");
    println!("snr_db  psnr_plain  psnr_comp  residual_symbols  status");
    for snr in [0.0, 5.0, 10.0, 20.0] {
        let mut semantic = chain.semantic;
        semantic.snr_db = snr;
        let mut link = link.clone();
        link.channel.snr_db = snr;
        let plain = run_hop_common(&img, &chain.codec, &semantic, 1)?;
        let comp = run_hop_compensated(&img, &chain.codec, &semantic, &link, 1, 2)?;
        println!(
            "{snr:6.1}  {:10.2}  {:9.2}  {:16}  {}",
            psnr(&img, &plain)?,
            psnr(&img, &comp.output)?,
            comp.residual_channel_symbols,
            comp.status.as_str()
        );
    }
    Ok(())
}
