//! Discretized logistic-mixture model of quantized residual symbols with
//! RGB autoregression, its negative log-likelihood, and analytic gradients.
//!
//! Symbol `s ∈ [0, Q)` is mapped to the centered value
//! `x = (s - (Q-1)/2) · 2/(Q-1)` in `[-1, 1]`; each bin spans `x ± 1/(Q-1)`
//! and the two outer bins absorb the tails.
//!
//! Per channel `c`, cell and component `k` the model holds a softmax logit,
//! a mean, a scale pre-activation `ρ` (`σ = softplus(ρ) + σ_min`) and one
//! autoregression coefficient. Channel 0 uses its mean as is, channel 1 adds
//! `λ₀·x₀`, channel 2 adds `λ₁·x₀ + λ₂·x₁`, where `x_c` is the centered
//! symbol of channel `c` at the same cell.

mod estimator;

pub use estimator::{
    cell_features, fit_estimator, CellFeatures, EstimatorTraining, ResidualEstimator,
    TrainingSample, FEATURES_PER_CELL,
};

use crate::accoder::{quantize_pmf, FrequencyTable, TableSource};
use crate::error::{Error, Result};
use crate::image::CHANNELS;

pub const SIGMA_MIN: f64 = 1e-3;
/// Per-symbol probability floor applied before taking logs.
pub const PROB_FLOOR: f64 = 1.0 / (1u64 << 24) as f64;
pub const DEFAULT_MIXTURES: usize = 5;

/// Quantized residual codes, channel-major then row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SymbolGrid {
    q: usize,
    rows: usize,
    cols: usize,
    data: Vec<u32>,
}

impl SymbolGrid {
    pub fn new(q: usize, rows: usize, cols: usize, data: Vec<u32>) -> Result<Self> {
        if q < 2 {
            return Err(Error::Config(format!("alphabet size {q} < 2")));
        }
        if data.len() != CHANNELS * rows * cols {
            return Err(Error::Dimension(format!(
                "{rows}x{cols}x3 grid needs {} symbols, got {}",
                CHANNELS * rows * cols,
                data.len()
            )));
        }
        if let Some(s) = data.iter().find(|&&s| s as usize >= q) {
            return Err(Error::Dimension(format!(
                "symbol {s} outside alphabet of {q}"
            )));
        }
        Ok(Self {
            q,
            rows,
            cols,
            data,
        })
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn cells(&self) -> usize {
        self.rows * self.cols
    }

    pub fn data(&self) -> &[u32] {
        &self.data
    }

    pub fn get(&self, c: usize, cell: usize) -> u32 {
        self.data[c * self.cells() + cell]
    }

    pub fn centered(&self, c: usize, cell: usize) -> f64 {
        centered_value(self.get(c, cell), self.q)
    }
}

pub fn centered_value(symbol: u32, q: usize) -> f64 {
    let half = (q - 1) as f64 / 2.0;
    (f64::from(symbol) - half) / half
}

fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

fn softplus(t: f64) -> f64 {
    if t > 30.0 {
        t
    } else {
        t.exp().ln_1p()
    }
}

/// Inverse of [`softplus`] for positive inputs.
pub fn softplus_inverse(y: f64) -> f64 {
    if y > 30.0 {
        y
    } else {
        y.exp_m1().ln()
    }
}

pub fn scale_from_pre(rho: f64) -> f64 {
    softplus(rho) + SIGMA_MIN
}

/// `1 / (1 + exp(-(x-μ)/σ))`.
pub fn logistic_cdf(x: f64, mean: f64, scale: f64) -> f64 {
    sigmoid((x - mean) / scale)
}

/// `sigmoid(a) - sigmoid(b)` for `a ≥ b`, computed on whichever tail avoids
/// cancellation.
fn sigmoid_diff(a: f64, b: f64) -> f64 {
    if b > 0.0 {
        sigmoid(-b) - sigmoid(-a)
    } else {
        sigmoid(a) - sigmoid(b)
    }
}

/// Standardized bin edges `(a, b)` of `symbol`, infinite for folded tails.
fn bin_edges(symbol: usize, mean: f64, scale: f64, q: usize) -> (f64, f64) {
    let x = centered_value(symbol as u32, q);
    let delta = 1.0 / (q - 1) as f64;
    let upper = if symbol + 1 == q {
        f64::INFINITY
    } else {
        (x + delta - mean) / scale
    };
    let lower = if symbol == 0 {
        f64::NEG_INFINITY
    } else {
        (x - delta - mean) / scale
    };
    (upper, lower)
}

fn bin_mass(upper: f64, lower: f64) -> f64 {
    match (upper.is_finite(), lower.is_finite()) {
        (true, true) => sigmoid_diff(upper, lower),
        (true, false) => sigmoid(upper),
        (false, true) => sigmoid(-lower),
        (false, false) => 1.0,
    }
}

/// Probability of `symbol` under one logistic with the given centered mean
/// and scale.
pub fn discretized_logistic_pmf(symbol: usize, mean: f64, scale: f64, q: usize) -> Result<f64> {
    if symbol >= q {
        return Err(Error::Dimension(format!(
            "symbol {symbol} outside alphabet of {q}"
        )));
    }
    if scale.is_nan() || scale < SIGMA_MIN {
        return Err(Error::Model(format!("scale {scale} below {SIGMA_MIN}")));
    }
    let (a, b) = bin_edges(symbol, mean, scale, q);
    Ok(bin_mass(a, b))
}

/// Unconstrained mixture parameters for a grid of cells.
///
/// Arrays are indexed `(c · K + k) · cells + cell`; for `lambdas`, `c` is the
/// coefficient index 0..3 instead of a channel.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureParams {
    k: usize,
    q: usize,
    cells: usize,
    pub logits: Vec<f64>,
    pub means: Vec<f64>,
    pub scale_pre: Vec<f64>,
    pub lambdas: Vec<f64>,
}

/// Gradients with the same layout as [`MixtureParams`].
pub type MixtureGrads = MixtureParams;

impl MixtureParams {
    pub fn zeros(k: usize, q: usize, cells: usize) -> Result<Self> {
        if k == 0 || q < 2 || cells == 0 {
            return Err(Error::Config(format!(
                "mixture needs K ≥ 1, Q ≥ 2, cells ≥ 1 (got {k}, {q}, {cells})"
            )));
        }
        let n = CHANNELS * k * cells;
        Ok(Self {
            k,
            q,
            cells,
            logits: vec![0.0; n],
            means: vec![0.0; n],
            scale_pre: vec![0.0; n],
            lambdas: vec![0.0; n],
        })
    }

    pub fn mixtures(&self) -> usize {
        self.k
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn cells(&self) -> usize {
        self.cells
    }

    pub fn index(&self, c: usize, k: usize, cell: usize) -> usize {
        (c * self.k + k) * self.cells + cell
    }

    /// Mixture weights of channel `c` at `cell`.
    pub fn weights(&self, c: usize, cell: usize) -> Vec<f64> {
        let logits: Vec<f64> = (0..self.k)
            .map(|k| self.logits[self.index(c, k, cell)])
            .collect();
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exp: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
        let s: f64 = exp.iter().sum();
        exp.into_iter().map(|e| e / s).collect()
    }

    pub fn scale(&self, c: usize, k: usize, cell: usize) -> f64 {
        scale_from_pre(self.scale_pre[self.index(c, k, cell)])
    }

    /// Mean of component `k` after conditioning on earlier channels' centered
    /// symbols `prev = (x₀, x₁)`.
    pub fn conditioned_mean(&self, c: usize, k: usize, cell: usize, prev: (f64, f64)) -> f64 {
        let mu = self.means[self.index(c, k, cell)];
        let lam = |j| self.lambdas[self.index(j, k, cell)];
        match c {
            0 => mu,
            1 => mu + lam(0) * prev.0,
            _ => mu + lam(1) * prev.0 + lam(2) * prev.1,
        }
    }

    fn check_grid(&self, grid: &SymbolGrid) -> Result<()> {
        if grid.cells() != self.cells || grid.q() != self.q {
            return Err(Error::Dimension(format!(
                "model covers {} cells with Q={}, grid has {} cells with Q={}",
                self.cells,
                self.q,
                grid.cells(),
                grid.q()
            )));
        }
        Ok(())
    }

    /// Conditioned means for every `(c, k, cell)`, laid out like `means`.
    pub fn conditioned_means(&self, grid: &SymbolGrid) -> Result<Vec<f64>> {
        self.check_grid(grid)?;
        let mut out = vec![0.0; self.means.len()];
        for c in 0..CHANNELS {
            for k in 0..self.k {
                for cell in 0..self.cells {
                    out[self.index(c, k, cell)] =
                        self.conditioned_mean(c, k, cell, prev_symbols(grid, cell));
                }
            }
        }
        Ok(out)
    }

    /// Full alphabet pmf of channel `c` at `cell` given earlier channels.
    pub fn cell_pmf(&self, c: usize, cell: usize, prev: (f64, f64)) -> Vec<f64> {
        let w = self.weights(c, cell);
        let mut pmf = vec![0.0; self.q];
        for (k, wk) in w.iter().enumerate() {
            let mean = self.conditioned_mean(c, k, cell, prev);
            let scale = self.scale(c, k, cell);
            for (s, p) in pmf.iter_mut().enumerate() {
                let (a, b) = bin_edges(s, mean, scale, self.q);
                *p += wk * bin_mass(a, b);
            }
        }
        pmf
    }

    /// Probability of the grid's symbol at `(c, cell)`.
    pub fn mixture_pmf(&self, grid: &SymbolGrid, c: usize, cell: usize) -> Result<f64> {
        self.check_grid(grid)?;
        let s = grid.get(c, cell) as usize;
        let prev = prev_symbols(grid, cell);
        let w = self.weights(c, cell);
        let mut p = 0.0;
        for (k, wk) in w.iter().enumerate() {
            let mean = self.conditioned_mean(c, k, cell, prev);
            p += wk * discretized_logistic_pmf(s, mean, self.scale(c, k, cell), self.q)?;
        }
        Ok(p)
    }

    /// `-Σ log max(p, 2^-24)` over the grid, in nats.
    pub fn joint_nll(&self, grid: &SymbolGrid) -> Result<f64> {
        self.check_grid(grid)?;
        let mut total = 0.0;
        for c in 0..CHANNELS {
            for cell in 0..self.cells {
                total -= self.mixture_pmf(grid, c, cell)?.max(PROB_FLOOR).ln();
            }
        }
        Ok(total)
    }

    /// Gradients of [`joint_nll`](Self::joint_nll) with respect to every
    /// pre-activation. Floored terms contribute nothing.
    pub fn nll_gradients(&self, grid: &SymbolGrid) -> Result<(f64, MixtureGrads)> {
        self.check_grid(grid)?;
        let mut g = MixtureParams::zeros(self.k, self.q, self.cells)?;
        let mut total = 0.0;
        let mut comp = vec![0.0; self.k];
        let mut dmean = vec![0.0; self.k];
        let mut dscale = vec![0.0; self.k];
        for c in 0..CHANNELS {
            for cell in 0..self.cells {
                let s = grid.get(c, cell) as usize;
                let prev = prev_symbols(grid, cell);
                let w = self.weights(c, cell);
                let mut p = 0.0;
                for k in 0..self.k {
                    let mean = self.conditioned_mean(c, k, cell, prev);
                    let scale = self.scale(c, k, cell);
                    let (a, b) = bin_edges(s, mean, scale, self.q);
                    comp[k] = bin_mass(a, b);
                    // d sigmoid(t)/dt = sigmoid(t) sigmoid(-t); t depends on (μ, σ)
                    let density = |t: f64| {
                        if t.is_finite() {
                            sigmoid(t) * sigmoid(-t)
                        } else {
                            0.0
                        }
                    };
                    let (fa, fb) = (density(a), density(b));
                    let ta = if a.is_finite() { a } else { 0.0 };
                    let tb = if b.is_finite() { b } else { 0.0 };
                    dmean[k] = -(fa - fb) / scale;
                    dscale[k] = -(fa * ta - fb * tb) / scale;
                    p += w[k] * comp[k];
                }
                if p < PROB_FLOOR {
                    total -= PROB_FLOOR.ln();
                    continue;
                }
                total -= p.ln();
                let inv = -1.0 / p;
                for k in 0..self.k {
                    let i = self.index(c, k, cell);
                    g.logits[i] += inv * w[k] * (comp[k] - p);
                    let dm = inv * w[k] * dmean[k];
                    g.means[i] += dm;
                    g.scale_pre[i] += inv * w[k] * dscale[k] * sigmoid(self.scale_pre[i]);
                    match c {
                        0 => {}
                        1 => g.lambdas[self.index(0, k, cell)] += dm * prev.0,
                        _ => {
                            g.lambdas[self.index(1, k, cell)] += dm * prev.0;
                            g.lambdas[self.index(2, k, cell)] += dm * prev.1;
                        }
                    }
                }
            }
        }
        Ok((total, g))
    }

    /// Every array in a fixed order: logits, means, scale pre-activations,
    /// lambdas.
    pub fn flat(&self) -> Vec<f64> {
        [&self.logits, &self.means, &self.scale_pre, &self.lambdas]
            .into_iter()
            .flatten()
            .copied()
            .collect()
    }

    pub fn flat_mut(&mut self) -> [&mut Vec<f64>; 4] {
        [
            &mut self.logits,
            &mut self.means,
            &mut self.scale_pre,
            &mut self.lambdas,
        ]
    }
}

fn prev_symbols(grid: &SymbolGrid, cell: usize) -> (f64, f64) {
    (grid.centered(0, cell), grid.centered(1, cell))
}

/// Quantized per-symbol tables in coding order, recomputed from the symbols
/// already coded at the same cell.
#[derive(Debug, Clone)]
pub struct MixtureTables<'a> {
    params: &'a MixtureParams,
    current: FrequencyTable,
}

impl<'a> MixtureTables<'a> {
    pub fn new(params: &'a MixtureParams) -> Result<Self> {
        Ok(Self {
            params,
            current: FrequencyTable::uniform(params.q)?,
        })
    }

    /// Symbol count for a full grid.
    pub fn len(&self) -> usize {
        CHANNELS * self.params.cells
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl TableSource for MixtureTables<'_> {
    fn table(&mut self, index: usize, history: &[u32]) -> &FrequencyTable {
        let cells = self.params.cells;
        let (c, cell) = (index / cells, index % cells);
        let q = self.params.q;
        let prev = (
            history.get(cell).map_or(0.0, |&s| centered_value(s, q)),
            history
                .get(cells + cell)
                .map_or(0.0, |&s| centered_value(s, q)),
        );
        let mut pmf = self.params.cell_pmf(c, cell, prev);
        let s: f64 = pmf.iter().sum();
        pmf.iter_mut().for_each(|p| *p /= s);
        self.current = quantize_pmf(&pmf).expect("mixture pmf is a valid distribution");
        &self.current
    }
}
