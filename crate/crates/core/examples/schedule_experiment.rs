//! Spends ten compensated hops early or late in a 30-hop chain and writes
//! the per-hop table as CSV.
//!
//! `cargo run --release --example schedule_experiment -- out/schedule.csv`

use std::fs::File;

use multihop_sim::config::Config;
use multihop_sim::pipeline::{
    sweep, write_csv, CbrAccounting, ChainConfig, Schedule, SweepAxis, SweepSpec,
};

fn main() -> multihop_sim::Result<()> {
    let out = std::env::args()
        .nth(1)
        .unwrap_or_else(|| "schedule.csv".into());
    let cfg = Config {
        hops: 30,
        ms_ssim: false,
        ..Config::default()
    };
    let images = cfg.images()?;
    let base = cfg.chain(&images)?;
    let mut rows = Vec::new();
    for (id, schedule) in [
        ("early", Schedule::parse("1-10")?),
        ("late", Schedule::parse("21-30")?),
        ("none", Schedule::None),
    ] {
        let spec = SweepSpec {
            experiment_id: id.into(),
            axis: SweepAxis::Hops,
            grid: vec![30.0],
            trials: 5,
            seed: 0,
            accounting: CbrAccounting::ChannelSymbols,
        };
        let chain = ChainConfig {
            schedule,
            ..base.clone()
        };
        let part = sweep(&spec, &chain, &images)?;
        let last: Vec<f64> = part
            .iter()
            .filter(|r| r.hop == 30)
            .map(|r| r.psnr_comp_db)
            .collect();
        println!(
            "{id:5}: final PSNR {:.2} dB",
            last.iter().sum::<f64>() / last.len() as f64
        );
        rows.extend(part);
    }
    let file =
        File::create(&out).map_err(|e| multihop_sim::Error::Config(format!("{out}: {e}")))?;
    write_csv(file, &rows)?;
    println!("wrote {out}");
    Ok(())
}
