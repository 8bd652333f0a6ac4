use multihop_sim::codec::{BlockDct, ResidualCompressor, SemanticCodec};
use multihop_sim::corpus::{synthetic_corpus, synthetic_image};
use multihop_sim::entropy::ResidualEstimator;
use multihop_sim::image::{psnr, ImageTensor};
use multihop_sim::modem::{QamConstellation, ResidualModem, ShippedCode};
use multihop_sim::pipeline::{
    cbr, hop_seeds, run_hop_common, run_hop_compensated, run_multihop, sweep, CbrAccounting,
    ChainConfig, FaultInjection, FrameStatus, LinkChannel, ResidualLink, Schedule, SweepAxis,
    SweepSpec,
};
use multihop_sim::seed::derive;

fn dct(h: usize, w: usize, code_len: usize) -> SemanticCodec {
    SemanticCodec::BlockDct(BlockDct::new(h, w, code_len).unwrap())
}

fn residual_link(block: usize, q: usize, range: f64, channel: LinkChannel) -> ResidualLink {
    ResidualLink {
        compressor: ResidualCompressor::new(block, q, range).unwrap(),
        estimator: ResidualEstimator::initial(5, q).unwrap(),
        modem: ResidualModem::new(
            ShippedCode::Rate12Long.load().unwrap(),
            QamConstellation::new(16).unwrap(),
            50,
        ),
        channel,
        fault: None,
    }
}

fn chain(
    hops: usize,
    codec: SemanticCodec,
    semantic: LinkChannel,
    residual: Option<ResidualLink>,
) -> ChainConfig {
    ChainConfig {
        hops,
        codec,
        semantic,
        residual,
        schedule: Schedule::All,
        ms_ssim: false,
    }
}

fn max_abs_diff(a: &ImageTensor, b: &ImageTensor) -> f64 {
    a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

#[test]
fn lossless_chain_is_transparent() {
    let img = synthetic_image(32, 32, 1).unwrap();
    let cfg = chain(4, dct(32, 32, 3 * 32 * 32), LinkChannel::ideal(), None);
    let out = run_multihop(&img, &cfg, 3).unwrap();
    assert!(max_abs_diff(&out.output, &img) < 1e-6);
}

#[test]
fn higher_snr_gives_higher_psnr_on_most_seeds() {
    let img = synthetic_image(32, 32, 2).unwrap();
    let codec = dct(32, 32, 768);
    let wins = (0..20u64)
        .filter(|&s| {
            let hi = run_hop_common(&img, &codec, &LinkChannel::rayleigh(30.0), s).unwrap();
            let lo = run_hop_common(&img, &codec, &LinkChannel::rayleigh(0.0), s).unwrap();
            psnr(&img, &hi).unwrap() > psnr(&img, &lo).unwrap()
        })
        .count();
    assert!(wins > 10, "{wins} of 20");
}

#[test]
fn fixed_seed_is_reproducible() {
    let img = synthetic_image(32, 32, 3).unwrap();
    let link = residual_link(8, 33, 0.5, LinkChannel::rayleigh(10.0));
    let cfg = chain(3, dct(32, 32, 768), LinkChannel::rayleigh(10.0), Some(link));
    let a = run_multihop(&img, &cfg, 11).unwrap();
    let b = run_multihop(&img, &cfg, 11).unwrap();
    assert_eq!(a.output, b.output);
    assert_eq!(a.reports, b.reports);
}

#[test]
fn disabled_link_passes_the_reconstruction_through() {
    let img = synthetic_image(32, 32, 4).unwrap();
    let mut cfg = chain(3, dct(32, 32, 768), LinkChannel::rayleigh(10.0), None);
    let plain = run_multihop(&img, &cfg, 5).unwrap();
    cfg.residual = Some(residual_link(8, 33, 0.5, LinkChannel::rayleigh(10.0)));
    cfg.schedule = Schedule::None;
    let off = run_multihop(&img, &cfg, 5).unwrap();
    assert_eq!(plain.output, off.output);
    for r in off.reports {
        assert_eq!(r.status, FrameStatus::Disabled);
        assert_eq!(r.psnr_recon_db, r.psnr_comp_db);
        assert_eq!(
            (r.residual_channel_symbols, r.residual_payload_bits),
            (0, 0)
        );
    }
}

#[test]
fn corrupted_frame_falls_back_to_reconstruction() {
    let img = synthetic_image(32, 32, 5).unwrap();
    let codec = dct(32, 32, 768);
    let semantic = LinkChannel::rayleigh(10.0);
    let mut link = residual_link(8, 33, 0.5, LinkChannel::ideal());
    let clean = run_hop_compensated(&img, &codec, &semantic, &link, 1, 2).unwrap();
    assert_eq!(clean.status, FrameStatus::Delivered);
    link.fault = Some(FaultInjection::NegateSymbols(usize::MAX));
    let hit = run_hop_compensated(&img, &codec, &semantic, &link, 1, 2).unwrap();
    assert_eq!(hit.status, FrameStatus::CrcFailed);
    assert_eq!(hit.output, hit.recon);
    assert_eq!(hit.recon, clean.recon);
}

// Per-pixel cells, a fine quantizer and noiseless links: the compensated
// output is the hop input up to half a quantizer step.
#[test]
fn full_compensation_limit() {
    let img = synthetic_image(16, 16, 6).unwrap();
    let link = residual_link(1, 257, 1.0, LinkChannel::ideal());
    let half_step = 1.0 / 256.0;
    let out =
        run_hop_compensated(&img, &dct(16, 16, 96), &LinkChannel::ideal(), &link, 7, 8).unwrap();
    assert_eq!(out.status, FrameStatus::Delivered);
    assert!(max_abs_diff(&out.recon, &img) > 0.05);
    assert!(max_abs_diff(&out.output, &img) <= half_step + 1e-12);
}

#[test]
fn single_hop_chain_equals_one_hop() {
    let img = synthetic_image(32, 32, 7).unwrap();
    let codec = dct(32, 32, 768);
    let semantic = LinkChannel::rayleigh(10.0);
    let link = residual_link(8, 33, 0.5, LinkChannel::rayleigh(10.0));
    let cfg = chain(1, codec.clone(), semantic, Some(link.clone()));
    let (s, r) = hop_seeds(42, 1);
    let direct = run_hop_compensated(&img, &codec, &semantic, &link, s, r).unwrap();
    let via_chain = run_multihop(&img, &cfg, 42).unwrap();
    assert_eq!(via_chain.output, direct.output);
    assert_eq!(via_chain.reports[0].status, direct.status);
}

// Zonal truncation is a projection, so over a noiseless link the error
// stops changing once the clamp no longer moves any pixel.
#[test]
fn noiseless_lossy_chain_reaches_a_fixed_point() {
    let img = synthetic_image(32, 32, 8).unwrap();
    let cfg = chain(8, dct(32, 32, 3 * 32 * 32 / 4), LinkChannel::ideal(), None);
    let out = run_multihop(&img, &cfg, 1).unwrap();
    let mse: Vec<f64> = out
        .reports
        .iter()
        .map(|r| 10f64.powf(-r.psnr_comp_db / 10.0))
        .collect();
    for w in mse.windows(2) {
        assert!(w[1] >= w[0] - 1e-12, "{mse:?}");
    }
    assert!((mse[7] - mse[6]).abs() < 1e-9 * mse[6], "{mse:?}");
}

#[test]
fn bandwidth_ratio_examples() {
    assert_eq!(cbr(3000, 0, 100, 100), 0.1);
    let base = cbr(3000, 0, 100, 100);
    let one = cbr(3000, 500, 100, 100) - base;
    let two = cbr(3000, 1000, 100, 100) - base;
    assert!((two - 2.0 * one).abs() < 1e-15);
}

#[test]
fn one_point_sweep_matches_direct_run() {
    let images = synthetic_corpus(2, 32, 32, 9).unwrap();
    let template = chain(2, dct(32, 32, 768), LinkChannel::rayleigh(10.0), None);
    let spec = SweepSpec {
        experiment_id: "single".into(),
        axis: SweepAxis::Hops,
        grid: vec![2.0],
        trials: 1,
        seed: 77,
        accounting: CbrAccounting::ChannelSymbols,
    };
    let rows = sweep(&spec, &template, &images).unwrap();
    let direct = run_multihop(&images[0], &template, derive(77, &[0])).unwrap();
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[1].psnr_comp_db, direct.reports[1].psnr_comp_db);
    assert_eq!(rows[1].trial_seed, derive(77, &[0]));
}

fn final_means(rows: &[multihop_sim::pipeline::CsvRow], grid: &[f64]) -> Vec<f64> {
    grid.iter()
        .map(|&g| {
            let last: Vec<f64> = rows
                .iter()
                .filter(|r| r.grid_value == g)
                .fold(std::collections::BTreeMap::new(), |mut m, r| {
                    m.insert(r.trial_seed, r.psnr_comp_db);
                    m
                })
                .into_values()
                .collect();
            last.iter().sum::<f64>() / last.len() as f64
        })
        .collect()
}

#[test]
fn compensated_quality_grows_with_snr() {
    let images = synthetic_corpus(20, 64, 64, 10).unwrap();
    let link = residual_link(16, 33, 0.5, LinkChannel::rayleigh(10.0));
    let template = chain(
        2,
        dct(64, 64, 1536),
        LinkChannel::rayleigh(10.0),
        Some(link),
    );
    let grid = vec![0.0, 5.0, 10.0, 15.0];
    let spec = SweepSpec {
        experiment_id: "snr".into(),
        axis: SweepAxis::Snr,
        grid: grid.clone(),
        trials: 20,
        seed: 3,
        accounting: CbrAccounting::ChannelSymbols,
    };
    let means = final_means(&sweep(&spec, &template, &images).unwrap(), &grid);
    assert!(means.windows(2).all(|w| w[1] >= w[0]), "{means:?}");
}

#[test]
fn uncompensated_quality_falls_with_hops() {
    let images = synthetic_corpus(20, 64, 64, 11).unwrap();
    let template = chain(1, dct(64, 64, 1536), LinkChannel::rayleigh(10.0), None);
    let grid = vec![5.0, 10.0, 20.0, 30.0];
    let spec = SweepSpec {
        experiment_id: "hops".into(),
        axis: SweepAxis::Hops,
        grid: grid.clone(),
        trials: 20,
        seed: 4,
        accounting: CbrAccounting::ChannelSymbols,
    };
    let rows = sweep(&spec, &template, &images).unwrap();
    let means: Vec<f64> = grid
        .iter()
        .map(|&g| {
            let finals: Vec<f64> = rows
                .iter()
                .filter(|r| r.grid_value == g && r.hop == g as usize)
                .map(|r| r.psnr_comp_db)
                .collect();
            assert_eq!(finals.len(), 20);
            finals.iter().sum::<f64>() / 20.0
        })
        .collect();
    assert!(means.windows(2).all(|w| w[1] <= w[0]), "{means:?}");
}

#[test]
fn schedule_parsing_and_checks() {
    let s = Schedule::parse("1-3, 7").unwrap();
    assert!(s.contains(1) && s.contains(3) && s.contains(7));
    assert!(!s.contains(4) && !s.contains(8));
    assert!(s.check(7).is_ok());
    assert!(s.check(6).is_err());
    assert!(Schedule::parse("all").unwrap().contains(99));
    assert!(!Schedule::parse("none").unwrap().contains(1));
    assert_eq!(Schedule::parse("").unwrap(), Schedule::None);
    for bad in ["0", "3-1", "x", "1,,2"] {
        assert!(Schedule::parse(bad).is_err(), "{bad:?}");
    }
}
