//! Per-cell affine estimator mapping block statistics of the emulated
//! reconstruction to mixture pre-activations.

use std::path::Path;

use super::{softplus_inverse, MixtureParams, SymbolGrid, SIGMA_MIN};
use crate::error::{Error, Result};
use crate::image::{ImageTensor, Shape, CHANNELS};
use crate::optim::{Adam, StepSchedule};
use crate::weights::{decode_weights, encode_weights, read_weights, write_weights, WeightsHeader};

/// Mean, standard deviation and RMS horizontal/vertical differences for each
/// channel of a block.
pub const FEATURES_PER_CELL: usize = 4 * CHANNELS;
const INPUTS: usize = FEATURES_PER_CELL + 1;
const MAGIC: [u8; 4] = *b"MHRE";
/// Output groups: logits, means, scale pre-activations, lambdas.
const GROUPS: usize = 4;

/// Block features of a conditioning image on a `rows × cols` cell grid.
#[derive(Debug, Clone, PartialEq)]
pub struct CellFeatures {
    pub rows: usize,
    pub cols: usize,
    /// `cells × FEATURES_PER_CELL`, row-major by cell.
    pub values: Vec<f64>,
}

impl CellFeatures {
    pub fn cells(&self) -> usize {
        self.rows * self.cols
    }

    fn cell(&self, i: usize) -> &[f64] {
        &self.values[i * FEATURES_PER_CELL..(i + 1) * FEATURES_PER_CELL]
    }
}

/// Features of each `block × block` tile (edge tiles are clipped).
pub fn cell_features(cond: &ImageTensor, block: usize) -> Result<CellFeatures> {
    if block == 0 {
        return Err(Error::Config("block size must be positive".into()));
    }
    let (h, w) = cond.dims();
    let rows = h.div_ceil(block);
    let cols = w.div_ceil(block);
    let mut values = Vec::with_capacity(rows * cols * FEATURES_PER_CELL);
    for bu in 0..rows {
        for bv in 0..cols {
            let (u0, u1) = (bu * block, ((bu + 1) * block).min(h));
            let (v0, v1) = (bv * block, ((bv + 1) * block).min(w));
            for c in 0..CHANNELS {
                let (mut s, mut ss, mut n) = (0.0, 0.0, 0.0);
                let (mut gh, mut nh, mut gv, mut nv) = (0.0, 0.0, 0.0, 0.0);
                for u in u0..u1 {
                    for v in v0..v1 {
                        let x = cond.get(c, u, v);
                        s += x;
                        ss += x * x;
                        n += 1.0;
                        if v + 1 < v1 {
                            let d = cond.get(c, u, v + 1) - x;
                            gh += d * d;
                            nh += 1.0;
                        }
                        if u + 1 < u1 {
                            let d = cond.get(c, u + 1, v) - x;
                            gv += d * d;
                            nv += 1.0;
                        }
                    }
                }
                let mean = s / n;
                let rms = |e: f64, k: f64| if k > 0.0 { (e / k).sqrt() } else { 0.0 };
                values.extend([
                    mean,
                    (ss / n - mean * mean).max(0.0).sqrt(),
                    rms(gh, nh),
                    rms(gv, nv),
                ]);
            }
        }
    }
    Ok(CellFeatures { rows, cols, values })
}

/// Affine map from `[features, 1]` to `4 · 3 · K` pre-activations per cell.
/// Output `(g · 3 + c) · K + k` feeds group `g` for channel (or coefficient)
/// `c` and component `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualEstimator {
    k: usize,
    q: usize,
    /// `outputs × INPUTS`, row-major.
    weights: Vec<f64>,
}

impl ResidualEstimator {
    /// All weights zero: uniform mixture weights, zero means, `σ = ln 2 + σ_min`.
    pub fn zeros(k: usize, q: usize) -> Result<Self> {
        if k == 0 || q < 2 {
            return Err(Error::Config(format!(
                "estimator needs K ≥ 1 and Q ≥ 2, got {k}, {q}"
            )));
        }
        Ok(Self {
            k,
            q,
            weights: vec![0.0; GROUPS * CHANNELS * k * INPUTS],
        })
    }

    /// Starting point for fitting: components share zero means but use
    /// geometrically spaced scales, which breaks their symmetry.
    pub fn initial(k: usize, q: usize) -> Result<Self> {
        let mut est = Self::zeros(k, q)?;
        let step = 2.0 / (q - 1) as f64;
        for c in 0..CHANNELS {
            for j in 0..k {
                let sigma = step * 0.5 * 2f64.powi(j as i32);
                let o = est.output(2, c, j);
                est.weights[o * INPUTS + FEATURES_PER_CELL] = softplus_inverse(sigma - SIGMA_MIN);
            }
        }
        Ok(est)
    }

    fn outputs(&self) -> usize {
        GROUPS * CHANNELS * self.k
    }

    fn output(&self, group: usize, c: usize, k: usize) -> usize {
        (group * CHANNELS + c) * self.k + k
    }

    pub fn mixtures(&self) -> usize {
        self.k
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    pub fn forward(&self, features: &CellFeatures) -> Result<MixtureParams> {
        let cells = features.cells();
        let mut params = MixtureParams::zeros(self.k, self.q, cells)?;
        let mut out = vec![0.0; self.outputs()];
        for cell in 0..cells {
            let f = features.cell(cell);
            for (o, y) in out.iter_mut().enumerate() {
                let row = &self.weights[o * INPUTS..(o + 1) * INPUTS];
                *y = row[FEATURES_PER_CELL] + row.iter().zip(f).map(|(a, b)| a * b).sum::<f64>();
            }
            for c in 0..CHANNELS {
                for k in 0..self.k {
                    let i = params.index(c, k, cell);
                    params.logits[i] = out[self.output(0, c, k)];
                    params.means[i] = out[self.output(1, c, k)];
                    params.scale_pre[i] = out[self.output(2, c, k)];
                    params.lambdas[i] = out[self.output(3, c, k)];
                }
            }
        }
        Ok(params)
    }

    /// Accumulates `∂loss/∂weights` given gradients on the pre-activations.
    pub fn backward(&self, features: &CellFeatures, grads: &MixtureParams, into: &mut [f64]) {
        for cell in 0..features.cells() {
            let f = features.cell(cell);
            for c in 0..CHANNELS {
                for k in 0..self.k {
                    let i = grads.index(c, k, cell);
                    let per_group = [
                        grads.logits[i],
                        grads.means[i],
                        grads.scale_pre[i],
                        grads.lambdas[i],
                    ];
                    for (g, &dy) in per_group.iter().enumerate() {
                        if dy == 0.0 {
                            continue;
                        }
                        let o = self.output(g, c, k);
                        let row = &mut into[o * INPUTS..(o + 1) * INPUTS];
                        for (r, x) in row.iter_mut().zip(f) {
                            *r += dy * x;
                        }
                        row[FEATURES_PER_CELL] += dy;
                    }
                }
            }
        }
    }

    /// Mean NLL per symbol (nats) over the samples and its weight gradient.
    pub fn loss_and_gradient(&self, samples: &[TrainingSample]) -> Result<(f64, Vec<f64>)> {
        let mut grad = vec![0.0; self.weights.len()];
        let mut total = 0.0;
        let mut symbols = 0usize;
        for s in samples {
            let params = self.forward(&s.features)?;
            let (nll, g) = params.nll_gradients(&s.grid)?;
            total += nll;
            symbols += s.grid.data().len();
            self.backward(&s.features, &g, &mut grad);
        }
        let n = symbols.max(1) as f64;
        grad.iter_mut().for_each(|g| *g /= n);
        Ok((total / n, grad))
    }

    pub fn mean_nll(&self, samples: &[TrainingSample]) -> Result<f64> {
        let mut total = 0.0;
        let mut symbols = 0usize;
        for s in samples {
            total += self.forward(&s.features)?.joint_nll(&s.grid)?;
            symbols += s.grid.data().len();
        }
        Ok(total / symbols.max(1) as f64)
    }

    fn header(&self) -> WeightsHeader {
        WeightsHeader {
            magic: MAGIC,
            dim: FEATURES_PER_CELL as u16,
            k: self.k as u32,
            q: self.q as u32,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        encode_weights(&self.header(), &self.weights)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (h, values) = decode_weights(bytes, MAGIC)?;
        Self::from_parts(h, values)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_weights(path, &self.header(), &self.weights)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let (h, values) = read_weights(path, MAGIC)?;
        Self::from_parts(h, values)
    }

    fn from_parts(h: WeightsHeader, values: Vec<f64>) -> Result<Self> {
        if usize::from(h.dim) != FEATURES_PER_CELL {
            return Err(Error::Weights(format!(
                "feature count {} != {FEATURES_PER_CELL}",
                h.dim
            )));
        }
        let mut est = Self::zeros(h.k as usize, h.q as usize)?;
        if values.len() != est.weights.len() {
            return Err(Error::Weights(format!(
                "{} values, expected {}",
                values.len(),
                est.weights.len()
            )));
        }
        est.weights = values;
        Ok(est)
    }
}

/// Conditioning features paired with the symbols they should predict.
#[derive(Debug, Clone)]
pub struct TrainingSample {
    pub features: CellFeatures,
    pub grid: SymbolGrid,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimatorTraining {
    pub steps: usize,
    pub schedule: StepSchedule,
}

impl Default for EstimatorTraining {
    fn default() -> Self {
        Self {
            steps: 300,
            schedule: StepSchedule {
                base: 0.05,
                every: 100,
                factor: 0.5,
            },
        }
    }
}

/// Full-batch Adam on the mean NLL. Returns the loss before each step and the
/// final loss.
pub fn fit_estimator(
    est: &mut ResidualEstimator,
    samples: &[TrainingSample],
    cfg: &EstimatorTraining,
) -> Result<Vec<f64>> {
    let mut opt = Adam::new(est.weights.len(), cfg.schedule.base);
    let mut curve = Vec::with_capacity(cfg.steps + 1);
    let mut initial = None;
    for step in 0..cfg.steps {
        let (loss, grad) = est.loss_and_gradient(samples)?;
        let init = *initial.get_or_insert(loss);
        if !loss.is_finite() || loss > 10.0 * init {
            return Err(Error::Divergence {
                step,
                loss,
                initial: init,
            });
        }
        curve.push(loss);
        opt.learning_rate = cfg.schedule.at(step);
        opt.step(&mut est.weights, &grad);
    }
    curve.push(est.mean_nll(samples)?);
    Ok(curve)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn features_of_constant_image() {
        let img = ImageTensor::filled(10, 12, 0.25).unwrap();
        let f = cell_features(&img, 4).unwrap();
        assert_eq!((f.rows, f.cols), (3, 3));
        for cell in 0..9 {
            let x = f.cell(cell);
            for c in 0..3 {
                assert!((x[4 * c] - 0.25).abs() < 1e-15);
                assert!(x[4 * c + 1].abs() < 1e-7);
                assert_eq!(x[4 * c + 2], 0.0);
                assert_eq!(x[4 * c + 3], 0.0);
            }
        }
    }

    #[test]
    fn zero_estimator_is_constant_model() {
        let img = ImageTensor::filled(8, 8, 0.6).unwrap();
        let f = cell_features(&img, 4).unwrap();
        let p = ResidualEstimator::zeros(3, 9).unwrap().forward(&f).unwrap();
        for cell in 0..4 {
            for c in 0..3 {
                assert_eq!(p.weights(c, cell), vec![1.0 / 3.0; 3]);
                for k in 0..3 {
                    assert_eq!(p.means[p.index(c, k, cell)], 0.0);
                    assert!((p.scale(c, k, cell) - (2f64.ln() + SIGMA_MIN)).abs() < 1e-15);
                }
            }
        }
    }

    #[test]
    fn bytes_roundtrip() {
        let mut est = ResidualEstimator::initial(2, 15).unwrap();
        est.weights_mut()[3] = -0.125;
        let back = ResidualEstimator::from_bytes(&est.to_bytes()).unwrap();
        assert_eq!(back, est);
    }
}
