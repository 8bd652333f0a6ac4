use multihop_sim::codec::{
    recursive_loss, BlockDct, LinearCodec, LinearInit, ResidualCompressor, SemanticCodec,
};
use multihop_sim::corpus::synthetic_corpus;
use multihop_sim::image::{ImageTensor, ResidualTensor};
use multihop_sim::optim::StepSchedule;
use multihop_sim::pipeline::LinkChannel;
use multihop_sim::train::{chain_loss, train_stage1, train_stage2, ChainTraining};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_image(h: usize, w: usize, seed: u64) -> ImageTensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ImageTensor::new(h, w, (0..3 * h * w).map(|_| rng.random::<f64>()).collect()).unwrap()
}

fn energy(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

#[test]
fn constant_image_has_only_dc_coefficients() {
    let (h, w) = (16, 24);
    let img = ImageTensor::filled(h, w, 0.3).unwrap();
    let codec = BlockDct::new(h, w, 3 * h * w).unwrap();
    let code = codec.encode(&img).unwrap();
    let blocks = codec.grid().count();
    assert_eq!(code.iter().filter(|c| c.abs() > 1e-12).count(), blocks);
    assert!((energy(&code) - energy(img.data())).abs() < 1e-9);
}

#[test]
fn full_retention_reconstructs_exactly() {
    let img = random_image(24, 16, 1);
    let codec = BlockDct::new(24, 16, 3 * 24 * 16).unwrap();
    let out = codec.decode(&codec.encode(&img).unwrap()).unwrap();
    for (a, b) in out.data().iter().zip(img.data()) {
        assert!((a - b).abs() < 1e-9);
    }
}

// The transform is orthonormal, so the error energy is whatever the code
// leaves out: Σx² − Σ(kept coefficients)².
#[test]
fn truncation_error_matches_parseval() {
    let (h, w) = (32, 40);
    let img = random_image(h, w, 2);
    let codec = BlockDct::new(h, w, 3 * h * w / 8).unwrap();
    let code = codec.encode(&img).unwrap();
    let rec = codec.decode_linear(&code).unwrap();
    let mse = rec
        .iter()
        .zip(img.data())
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        / (3 * h * w) as f64;
    let oracle = (energy(img.data()) - energy(&code)) / (3 * h * w) as f64;
    assert!((mse - oracle).abs() < 1e-12, "{mse} vs {oracle}");
}

#[test]
fn zero_code_decodes_to_black() {
    let codec = LinearCodec::new(16, 16, 96, LinearInit::Random { seed: 3 }).unwrap();
    let img = codec.decode(&vec![0.0; 96]).unwrap();
    assert!(img.data().iter().all(|&x| x == 0.0));
}

#[test]
fn constant_image_survives_any_code_length() {
    let img = ImageTensor::filled(16, 32, 0.62).unwrap();
    let blocks = 3 * 2 * 4;
    for m in [2, 4, 10, 64] {
        let codec = LinearCodec::new(16, 32, m * blocks, LinearInit::Dct).unwrap();
        let out = codec.decode(&codec.encode(&img).unwrap()).unwrap();
        assert!(
            out.data().iter().all(|x| (x - 0.62).abs() < 1e-12),
            "m = {m}"
        );
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn decoder_is_linear_before_clamping(seed in any::<u64>()) {
        let codec = LinearCodec::new(16, 16, 192, LinearInit::Random { seed }).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
        let a: Vec<f64> = (0..192).map(|_| rng.random_range(-2.0..2.0)).collect();
        let b: Vec<f64> = (0..192).map(|_| rng.random_range(-2.0..2.0)).collect();
        let sum: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + y).collect();
        let (da, db, ds) = (
            codec.decode_linear(&a).unwrap(),
            codec.decode_linear(&b).unwrap(),
            codec.decode_linear(&sum).unwrap(),
        );
        for i in 0..ds.len() {
            prop_assert!((ds[i] - da[i] - db[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn compression_is_idempotent(seed in any::<u64>(), q in prop::sample::select(vec![3usize, 9, 17, 129])) {
        let rc = ResidualCompressor::new(4, q, 0.5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let r = ResidualTensor::new(8, 12, (0..3 * 96).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let g = rc.compress(&r).unwrap();
        let again = rc.compress(&rc.decompress(&g, 8, 12).unwrap()).unwrap();
        prop_assert_eq!(g, again);
    }
}

#[test]
fn zero_and_saturated_residuals() {
    let rc = ResidualCompressor::new(4, 17, 1.0).unwrap();
    let zero = rc.compress(&ResidualTensor::zeros(8, 8)).unwrap();
    assert!(zero.data().iter().all(|&s| s == 8));
    let back = rc.decompress(&zero, 8, 8).unwrap();
    assert!(back.data().iter().all(|&x| x == 0.0));
    let ones = ResidualTensor::new(8, 8, vec![1.0; 192]).unwrap();
    assert!(rc.compress(&ones).unwrap().data().iter().all(|&s| s == 16));
}

#[test]
fn block_means_are_within_half_a_step() {
    let rc = ResidualCompressor::new(4, 33, 1.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let r = ResidualTensor::new(
        16,
        16,
        (0..768).map(|_| rng.random_range(-1.0..1.0)).collect(),
    )
    .unwrap();
    let grid = rc.compress(&r).unwrap();
    let step = 2.0 / 32.0;
    for (i, &s) in grid.data().iter().enumerate() {
        let (c, cell) = (i / 16, i % 16);
        let (u0, v0) = (4 * (cell / 4), 4 * (cell % 4));
        let mut mean = 0.0;
        for u in u0..u0 + 4 {
            for v in v0..v0 + 4 {
                mean += r.get(c, u, v) / 16.0;
            }
        }
        let value = s as f64 * step - 1.0;
        assert!((value - mean).abs() <= step / 2.0 + 1e-12);
        assert_eq!(rc.dequantize(s), value);
    }
}

#[test]
fn recursive_loss_by_hand() {
    let got = recursive_loss(&[vec![1e-3, 2e-3, 3e-3]], 1.15).unwrap();
    let want = (1.15 * 1.15 * 0.001 + 1.15 * 0.002 + 0.003) / 3.0;
    assert!((got - want).abs() < 1e-15);
    assert_eq!(
        recursive_loss(&[vec![0.2], vec![0.4]], 1.15).unwrap(),
        0.30000000000000004
    );
    assert!((recursive_loss(&[vec![0.7; 5]], 1.0).unwrap() - 0.7).abs() < 1e-15);
}

fn small_training(steps: usize) -> ChainTraining {
    ChainTraining {
        hops: 2,
        realizations: 1,
        steps,
        ..ChainTraining::default()
    }
}

#[test]
fn zero_learning_rate_leaves_weights_unchanged() {
    let images = synthetic_corpus(2, 32, 32, 5).unwrap();
    let mut codec = LinearCodec::new(32, 32, 192, LinearInit::Random { seed: 5 }).unwrap();
    let before = codec.clone();
    let cfg = ChainTraining {
        schedule: StepSchedule::constant(0.0),
        ..small_training(3)
    };
    train_stage1(&mut codec, &images, &cfg).unwrap();
    assert_eq!(codec.to_bytes(), before.to_bytes());
}

#[test]
fn zero_steps_leave_compressor_unchanged() {
    let images = synthetic_corpus(2, 32, 32, 6).unwrap();
    let codec = SemanticCodec::BlockDct(BlockDct::new(32, 32, 192).unwrap());
    let mut rc = ResidualCompressor::new(8, 33, 0.5).unwrap();
    let before = rc.to_bytes();
    let curve = train_stage2(&codec, &mut rc, &images, &small_training(0)).unwrap();
    assert_eq!(rc.to_bytes(), before);
    assert_eq!(curve.initial, curve.last);
}

#[test]
fn stage_two_keeps_backbone_and_beats_no_compensation() {
    let images = synthetic_corpus(4, 32, 32, 7).unwrap();
    let mut linear = LinearCodec::new(32, 32, 192, LinearInit::Random { seed: 7 }).unwrap();
    let cfg = small_training(10);
    train_stage1(&mut linear, &images, &cfg).unwrap();
    let frozen = linear.to_bytes();
    let codec = SemanticCodec::Linear(linear);
    let mut rc = ResidualCompressor::new(8, 33, 0.5).unwrap();
    let curve = train_stage2(&codec, &mut rc, &images, &cfg).unwrap();
    match &codec {
        SemanticCodec::Linear(c) => assert_eq!(c.to_bytes(), frozen),
        _ => unreachable!(),
    }
    let without = chain_loss(&codec, None, &images, &cfg).unwrap();
    assert!(curve.last <= without, "{} vs {without}", curve.last);
}

// With one noiseless hop the trained codec is a linear autoencoder, whose
// optimum is the principal subspace of the training blocks. Starting from the
// zonal DCT, training must move below it.
#[test]
fn noiseless_single_hop_training_beats_zonal_dct() {
    let images = synthetic_corpus(8, 32, 32, 9).unwrap();
    let cfg = ChainTraining {
        hops: 1,
        link: LinkChannel::ideal(),
        realizations: 1,
        steps: 100,
        schedule: StepSchedule::constant(1e-3),
        ..ChainTraining::default()
    };
    let dct = SemanticCodec::BlockDct(BlockDct::new(32, 32, 192).unwrap());
    let baseline = chain_loss(&dct, None, &images, &cfg).unwrap();
    let mut codec = LinearCodec::new(32, 32, 192, LinearInit::Dct).unwrap();
    let curve = train_stage1(&mut codec, &images, &cfg).unwrap();
    assert!((curve.initial - baseline).abs() < 1e-12);
    assert!(
        curve.last < 0.98 * baseline,
        "{} vs zonal {baseline}",
        curve.last
    );
}
