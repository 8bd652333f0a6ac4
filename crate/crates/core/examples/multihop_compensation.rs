//! Distortion accumulation over a 20-hop chain, with the residual link on
//! every hop and switched off.
//!
//! `cargo run --release --example multihop_compensation`

use multihop_sim::config::Config;
use multihop_sim::corpus::synthetic_corpus;
use multihop_sim::pipeline::{run_multihop, ChainConfig, Schedule};

fn main() -> multihop_sim::Result<()> {
    let cfg = Config {
        hops: 20,
        ms_ssim: false,
        ..Config::default()
    };
    let full = cfg.chain(&cfg.images()?)?;
    let none = ChainConfig {
        schedule: Schedule::None,
        ..full.clone()
    };
    let images = synthetic_corpus(5, cfg.image.height, cfg.image.width, 99)?;
    let mut sums = vec![(0.0, 0.0); cfg.hops];
    for (t, img) in images.iter().enumerate() {
        let a = run_multihop(img, &full, t as u64)?;
        let b = run_multihop(img, &none, t as u64)?;
        for (s, (ra, rb)) in sums.iter_mut().zip(a.reports.iter().zip(&b.reports)) {
            s.0 += ra.psnr_comp_db / images.len() as f64;
            s.1 += rb.psnr_comp_db / images.len() as f64;
        }
    }
    println!("hop  compensated  uncompensated");
    for (n, (a, b)) in sums.iter().enumerate() {
        println!("{:3}  {a:11.2}  {b:13.2}", n + 1);
    }
    Ok(())
}
