use multihop_sim::accoder::{
    codelength_bound, encode, FixedTable, FrequencyTable, TableSource, TOTAL,
};
use multihop_sim::entropy::{
    cell_features, centered_value, discretized_logistic_pmf, fit_estimator, logistic_cdf,
    softplus_inverse, EstimatorTraining, MixtureParams, MixtureTables, ResidualEstimator,
    SymbolGrid, TrainingSample, PROB_FLOOR, SIGMA_MIN,
};
use multihop_sim::image::ImageTensor;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_params(rng: &mut ChaCha8Rng, k: usize, q: usize, cells: usize) -> MixtureParams {
    let mut p = MixtureParams::zeros(k, q, cells).unwrap();
    let n = p.logits.len();
    for i in 0..n {
        p.logits[i] = rng.random_range(-1.0..1.0);
        p.means[i] = rng.random_range(-0.8..0.8);
        p.scale_pre[i] = softplus_inverse(rng.random_range(0.08..0.6));
        p.lambdas[i] = rng.random_range(-0.6..0.6);
    }
    p
}

fn random_grid(rng: &mut ChaCha8Rng, q: usize, rows: usize, cols: usize) -> SymbolGrid {
    let data = (0..3 * rows * cols)
        .map(|_| rng.random_range(0..q as u32))
        .collect();
    SymbolGrid::new(q, rows, cols, data).unwrap()
}

/// Straight transcription of the component pmf as a CDF difference with
/// explicit tail folding.
fn scalar_component_pmf(s: usize, mean: f64, scale: f64, q: usize) -> f64 {
    let x = centered_value(s as u32, q);
    let d = 1.0 / (q - 1) as f64;
    let hi = if s == q - 1 {
        1.0
    } else {
        logistic_cdf(x + d, mean, scale)
    };
    let lo = if s == 0 {
        0.0
    } else {
        logistic_cdf(x - d, mean, scale)
    };
    hi - lo
}

fn scalar_pmf(p: &MixtureParams, grid: &SymbolGrid, c: usize, cell: usize) -> f64 {
    let k = p.mixtures();
    let logits: Vec<f64> = (0..k).map(|j| p.logits[p.index(c, j, cell)]).collect();
    let z: f64 = logits.iter().map(|l| l.exp()).sum();
    let x0 = grid.centered(0, cell);
    let x1 = grid.centered(1, cell);
    (0..k)
        .map(|j| {
            let mut m = p.means[p.index(c, j, cell)];
            if c == 1 {
                m += p.lambdas[p.index(0, j, cell)] * x0;
            }
            if c == 2 {
                m += p.lambdas[p.index(1, j, cell)] * x0 + p.lambdas[p.index(2, j, cell)] * x1;
            }
            let sigma = p.scale(c, j, cell);
            logits[j].exp() / z
                * scalar_component_pmf(grid.get(c, cell) as usize, m, sigma, grid.q())
        })
        .sum()
}

#[test]
fn conditioned_means_match_triple_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let p = random_params(&mut rng, 3, 17, 12);
    let grid = random_grid(&mut rng, 17, 3, 4);
    let got = p.conditioned_means(&grid).unwrap();
    for c in 0..3 {
        for k in 0..3 {
            for cell in 0..12 {
                let mu = p.means[p.index(c, k, cell)];
                let lam = |j: usize| p.lambdas[p.index(j, k, cell)];
                let x0 = (grid.get(0, cell) as f64 - 8.0) / 8.0;
                let x1 = (grid.get(1, cell) as f64 - 8.0) / 8.0;
                let want = match c {
                    0 => mu,
                    1 => mu + lam(0) * x0,
                    _ => mu + lam(1) * x0 + lam(2) * x1,
                };
                assert!((got[p.index(c, k, cell)] - want).abs() < 1e-12);
            }
        }
    }
    let mut flat = p.clone();
    flat.lambdas.iter_mut().for_each(|l| *l = 0.0);
    assert_eq!(flat.conditioned_means(&grid).unwrap(), flat.means);
}

#[test]
fn component_pmf_matches_quadrature_of_density() {
    let q = 16;
    let (mean, scale) = (0.0, 2.0);
    let density = |t: f64| {
        let z = (-(t - mean) / scale).exp();
        z / (scale * (1.0 + z) * (1.0 + z))
    };
    let d = 1.0 / (q - 1) as f64;
    for s in 0..q {
        let x = centered_value(s as u32, q);
        let (lo, hi) = (x - d, x + d);
        // Simpson's rule on the bin plus analytic tails for the edge bins.
        let n = 2000;
        let h = (hi - lo) / n as f64;
        let mut acc = density(lo) + density(hi);
        for i in 1..n {
            acc += density(lo + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        let mut mass = acc * h / 3.0;
        if s == 0 {
            mass += 1.0 / (1.0 + ((lo - mean) / scale).exp().recip());
        }
        if s == q - 1 {
            mass += 1.0 - 1.0 / (1.0 + (-(hi - mean) / scale).exp());
        }
        let got = discretized_logistic_pmf(s, mean, scale, q).unwrap();
        assert!((got - mass).abs() < 1e-6, "s={s}: {got} vs {mass}");
    }
}

#[test]
fn mixture_pmf_degenerate_cases_and_scalar_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let q = 11;
    let grid = random_grid(&mut rng, q, 2, 3);
    let mut p = random_params(&mut rng, 4, q, 6);
    for c in 0..3 {
        for cell in 0..6 {
            assert!(
                (p.mixture_pmf(&grid, c, cell).unwrap() - scalar_pmf(&p, &grid, c, cell)).abs()
                    < 1e-12
            );
        }
    }
    // identical components
    for c in 0..3 {
        for cell in 0..6 {
            for k in 1..4 {
                for arr in [&mut p.means, &mut p.scale_pre, &mut p.lambdas] {
                    arr[(c * 4 + k) * 6 + cell] = arr[(c * 4) * 6 + cell];
                }
            }
        }
    }
    let mut single = MixtureParams::zeros(1, q, 6).unwrap();
    for c in 0..3 {
        for cell in 0..6 {
            let (i, j) = (p.index(c, 0, cell), single.index(c, 0, cell));
            single.means[j] = p.means[i];
            single.scale_pre[j] = p.scale_pre[i];
            single.lambdas[j] = p.lambdas[i];
        }
    }
    for c in 0..3 {
        for cell in 0..6 {
            let a = p.mixture_pmf(&grid, c, cell).unwrap();
            let b = single.mixture_pmf(&grid, c, cell).unwrap();
            assert!((a - b).abs() < 1e-12);
        }
    }
    // one-hot weights select a component
    let mut hot = random_params(&mut rng, 3, q, 6);
    for c in 0..3 {
        for cell in 0..6 {
            for k in 0..3 {
                let i = hot.index(c, k, cell);
                hot.logits[i] = if k == 2 { 0.0 } else { -800.0 };
            }
            let m = hot.conditioned_means(&grid).unwrap()[hot.index(c, 2, cell)];
            let want =
                discretized_logistic_pmf(grid.get(c, cell) as usize, m, hot.scale(c, 2, cell), q)
                    .unwrap();
            assert!((hot.mixture_pmf(&grid, c, cell).unwrap() - want).abs() < 1e-12);
        }
    }
}

#[test]
fn joint_nll_reference_values() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (q, rows, cols) = (8, 2, 2);
    let cells = rows * cols;
    let grid = random_grid(&mut rng, q, rows, cols);

    // one sharp component per symbol with equal weights ≈ uniform
    let mut uni = MixtureParams::zeros(q, q, cells).unwrap();
    for c in 0..3 {
        for k in 0..q {
            for cell in 0..cells {
                let i = uni.index(c, k, cell);
                uni.means[i] = centered_value(k as u32, q);
                uni.scale_pre[i] = -60.0;
            }
        }
    }
    let nll = uni.joint_nll(&grid).unwrap();
    let want = 3.0 * cells as f64 * (q as f64).ln();
    assert!((nll - want).abs() < 1e-9 * want, "{nll} vs {want}");

    // concentrated on the truth
    let mut hot = MixtureParams::zeros(1, q, cells).unwrap();
    for c in 0..3 {
        for cell in 0..cells {
            let i = hot.index(c, 0, cell);
            hot.means[i] = grid.centered(c, cell);
            hot.scale_pre[i] = -60.0;
        }
    }
    assert!(hot.joint_nll(&grid).unwrap() < 1e-9);

    let p = random_params(&mut rng, 2, q, cells);
    let sum: f64 = (0..3)
        .flat_map(|c| (0..cells).map(move |cell| (c, cell)))
        .map(|(c, cell)| -scalar_pmf(&p, &grid, c, cell).max(PROB_FLOOR).ln())
        .sum();
    assert!((p.joint_nll(&grid).unwrap() - sum).abs() < 1e-10);
}

/// Largest relative deviation between analytic and central-difference
/// gradients; the denominator is floored so near-zero entries are compared
/// absolutely.
pub fn gradient_check(p: &MixtureParams, grid: &SymbolGrid, step: f64) -> f64 {
    let (_, g) = p.nll_gradients(grid).unwrap();
    let analytic = g.flat();
    let mut worst: f64 = 0.0;
    let mut idx = 0;
    for group in 0..4 {
        let len = p.logits.len();
        for i in 0..len {
            let mut plus = p.clone();
            let mut minus = p.clone();
            plus.flat_mut()[group][i] += step;
            minus.flat_mut()[group][i] -= step;
            let fd =
                (plus.joint_nll(grid).unwrap() - minus.joint_nll(grid).unwrap()) / (2.0 * step);
            let a = analytic[idx];
            let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-3);
            worst = worst.max(rel);
            idx += 1;
        }
    }
    worst
}

#[test]
fn analytic_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let q = rng.random_range(5..40);
        let p = random_params(&mut rng, 2, q, 16);
        let grid = random_grid(&mut rng, q, 4, 4);
        worst = worst.max(gradient_check(&p, &grid, 1e-4));
    }
    assert!(worst <= 1e-4, "worst relative error {worst}");
}

#[test]
fn lambda_gradient_vanishes_for_zero_previous_symbols() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let q = 9;
    let p = random_params(&mut rng, 2, q, 4);
    let mut data: Vec<u32> = (0..12).map(|_| rng.random_range(0..q as u32)).collect();
    data[..8].iter_mut().for_each(|s| *s = 4); // channels 0 and 1 at the center
    let grid = SymbolGrid::new(q, 2, 2, data).unwrap();
    let (_, g) = p.nll_gradients(&grid).unwrap();
    assert!(g.lambdas.iter().all(|&x| x == 0.0));
}

#[test]
fn mean_gradient_vanishes_at_symmetric_point() {
    let q = 7;
    let mut p = MixtureParams::zeros(2, q, 2).unwrap();
    p.scale_pre
        .iter_mut()
        .for_each(|s| *s = softplus_inverse(0.4));
    // cell 0 holds s, cell 1 its mirror image
    let data = vec![1, 5, 2, 4, 0, 6];
    let grid = SymbolGrid::new(q, 1, 2, data).unwrap();
    let (_, g) = p.nll_gradients(&grid).unwrap();
    for c in 0..3 {
        for k in 0..2 {
            let sum = g.means[p.index(c, k, 0)] + g.means[p.index(c, k, 1)];
            assert!(sum.abs() < 1e-12);
        }
    }
}

#[test]
fn quantized_tables_always_total_2_pow_16() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..1000 {
        let q = rng.random_range(2..64);
        let p = random_params(&mut rng, 3, q, 4);
        let grid = random_grid(&mut rng, q, 2, 2);
        let mut tables = MixtureTables::new(&p).unwrap();
        for t in 0..12 {
            let table = tables.table(t, &grid.data()[..t]);
            assert_eq!(table.cumulative()[q], TOTAL);
            assert_eq!(
                table.frequencies().iter().map(|&f| f as u64).sum::<u64>(),
                TOTAL as u64
            );
        }
    }
}

#[test]
fn later_channels_never_influence_earlier_ones() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let q = 13;
    let p = random_params(&mut rng, 3, q, 6);
    let grid = random_grid(&mut rng, q, 2, 3);
    let mut data = grid.data().to_vec();
    data[12..].reverse();
    let permuted = SymbolGrid::new(q, 2, 3, data).unwrap();
    for c in 0..2 {
        for cell in 0..6 {
            assert_eq!(
                p.mixture_pmf(&grid, c, cell).unwrap(),
                p.mixture_pmf(&permuted, c, cell).unwrap()
            );
        }
    }
}

/// Smooth images whose residual grids are peaked around zero, with spread
/// growing with local texture.
fn synthetic_samples(seed: u64, count: usize, q: usize) -> Vec<TrainingSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let block = 8;
    (0..count)
        .map(|_| {
            let n = 32;
            let base: f64 = rng.random_range(0.2..0.8);
            let amp: f64 = rng.random_range(0.0..0.3);
            let data: Vec<f64> = (0..3 * n * n)
                .map(|i| {
                    let (u, v) = ((i / n) % n, i % n);
                    (base + amp * ((u as f64 * 0.7).sin() * (v as f64 * 0.9).cos())).clamp(0.0, 1.0)
                })
                .collect();
            let img = ImageTensor::new(n, n, data).unwrap();
            let features = cell_features(&img, block).unwrap();
            let spread = 0.01 + amp;
            let half = (q - 1) as f64 / 2.0;
            let laplace = |rng: &mut ChaCha8Rng| {
                let u: f64 = rng.random_range(-0.5..0.5);
                -spread * u.signum() * (1.0 - 2.0 * u.abs()).ln()
            };
            let symbols = (0..3 * 16)
                .map(|_| ((laplace(&mut rng) * half).round() + half).clamp(0.0, 2.0 * half) as u32)
                .collect();
            TrainingSample {
                features,
                grid: SymbolGrid::new(q, 4, 4, symbols).unwrap(),
            }
        })
        .collect()
}

#[test]
fn fitted_estimator_beats_uniform_coding() {
    let q = 31;
    let train = synthetic_samples(8, 48, q);
    let held_out = synthetic_samples(9, 16, q);
    let mut est = ResidualEstimator::initial(5, q).unwrap();
    let curve = fit_estimator(&mut est, &train, &EstimatorTraining::default()).unwrap();
    assert!(curve.last().unwrap() < &curve[0]);
    let nll = est.mean_nll(&held_out).unwrap();
    assert!(
        nll < (q as f64).ln(),
        "{nll} nats vs uniform {}",
        (q as f64).ln()
    );

    let (mut trained_bits, mut uniform_bits, mut bound) = (0usize, 0usize, 0.0);
    for s in &held_out {
        let params = est.forward(&s.features).unwrap();
        trained_bits += encode(s.grid.data(), &mut MixtureTables::new(&params).unwrap())
            .unwrap()
            .bit_len();
        bound += codelength_bound(s.grid.data(), &mut MixtureTables::new(&params).unwrap());
        let mut uniform = FixedTable(FrequencyTable::uniform(q).unwrap());
        uniform_bits += encode(s.grid.data(), &mut uniform).unwrap().bit_len();
    }
    assert!(
        trained_bits < uniform_bits,
        "{trained_bits} vs {uniform_bits}"
    );
    assert!(bound / (held_out.len() * 48) as f64 <= (q as f64).log2());
}

#[test]
fn small_step_gradient_descent_is_monotone() {
    let q = 15;
    let samples = synthetic_samples(10, 12, q);
    let mut est = ResidualEstimator::initial(2, q).unwrap();
    let (mut loss, mut grad) = est.loss_and_gradient(&samples).unwrap();
    let mut step = 0.5;
    for _ in 0..100 {
        loop {
            let mut trial = est.clone();
            trial
                .weights_mut()
                .iter_mut()
                .zip(&grad)
                .for_each(|(w, g)| *w -= step * g);
            let (l, g) = trial.loss_and_gradient(&samples).unwrap();
            if l <= loss {
                est = trial;
                loss = l;
                grad = g;
                break;
            }
            step *= 0.5;
            assert!(step > 1e-12, "no descent step found");
        }
    }
}

#[test]
fn estimator_is_deterministic() {
    let samples = synthetic_samples(11, 2, 9);
    let est = ResidualEstimator::initial(3, 9).unwrap();
    let a = est.forward(&samples[0].features).unwrap();
    let b = est.forward(&samples[0].features).unwrap();
    assert_eq!(
        a.flat().iter().map(|x| x.to_bits()).collect::<Vec<_>>(),
        b.flat().iter().map(|x| x.to_bits()).collect::<Vec<_>>()
    );
}

proptest! {
    #[test]
    fn component_mass_sums_to_one(mean in -3.0f64..3.0, scale in SIGMA_MIN..10.0, q in 2usize..300) {
        let s: f64 = (0..q).map(|i| discretized_logistic_pmf(i, mean, scale, q).unwrap()).sum();
        prop_assert!((s - 1.0).abs() < 1e-12);
    }

    #[test]
    fn component_pmf_matches_cdf_difference(mean in -1.5f64..1.5, scale in 0.01f64..3.0, q in 2usize..64) {
        for s in 0..q {
            let a = discretized_logistic_pmf(s, mean, scale, q).unwrap();
            prop_assert!((a - scalar_component_pmf(s, mean, scale, q)).abs() < 1e-12);
        }
    }
}

#[test]
fn zero_sigma_floor_is_respected() {
    let mut p = MixtureParams::zeros(1, 4, 1).unwrap();
    p.scale_pre[0] = -1e4;
    assert!(p.scale(0, 0, 0) >= SIGMA_MIN);
}
