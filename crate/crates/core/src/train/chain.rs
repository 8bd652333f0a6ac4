use rayon::prelude::*;

use crate::channel::{real_affine, RealAffine};
use crate::codec::blocks::BLOCK_LEN;
use crate::codec::{hop_weight, ColorAffine, LinearCodec, ResidualCompressor, SemanticCodec};
use crate::error::{Error, Result};
use crate::image::{ImageTensor, CHANNELS};
use crate::optim::{Adam, StepSchedule};
use crate::pipeline::LinkChannel;
use crate::seed::derive;

const EVAL_LABEL: u64 = u64::MAX;

/// Settings shared by the two chain-loss stages.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChainTraining {
    pub hops: usize,
    pub gamma: f64,
    pub link: LinkChannel,
    /// Channel realizations averaged per image and step.
    pub realizations: usize,
    pub steps: usize,
    pub schedule: StepSchedule,
    pub seed: u64,
}

impl Default for ChainTraining {
    fn default() -> Self {
        Self {
            hops: 4,
            gamma: 1.15,
            link: LinkChannel::rayleigh(10.0),
            realizations: 4,
            steps: 200,
            schedule: StepSchedule {
                base: 0.01,
                every: 100,
                factor: 0.5,
            },
            seed: 0,
        }
    }
}

impl ChainTraining {
    fn check(&self) -> Result<()> {
        if self.hops == 0 || self.realizations == 0 || self.gamma.is_nan() || self.gamma <= 0.0 {
            return Err(Error::Config(
                "chain training needs N ≥ 1, γ > 0 and at least one realization".into(),
            ));
        }
        Ok(())
    }
}

/// Forward state of the codec on one hop.
struct CodecTape {
    blocks: Vec<f64>,
    code: Vec<f64>,
    received: Vec<f64>,
    /// Decoder output before clamping, planar.
    raw: Vec<f64>,
    affine: RealAffine,
}

fn codec_forward(
    codec: &SemanticCodec,
    input: &[f64],
    link: &LinkChannel,
    seed: u64,
) -> Result<(Vec<f64>, CodecTape)> {
    let grid = codec.grid();
    let blocks = grid.gather_planar(input);
    let code = codec.encode_blocks(&blocks);
    let ch = link.realize(code.len() / 2, seed)?;
    let affine = real_affine(&code, &ch)?;
    let received = affine.apply(&code);
    let raw = grid.scatter(&codec.decode_blocks(&received));
    let out = raw.iter().map(|v| v.clamp(0.0, 1.0)).collect();
    Ok((
        out,
        CodecTape {
            blocks,
            code,
            received,
            raw,
            affine,
        },
    ))
}

/// Returns the gradient w.r.t. the hop input; accumulates linear-codec
/// weight gradients (encoder then decoder) into `params` when given.
fn codec_backward(
    codec: &SemanticCodec,
    tape: &CodecTape,
    grad_out: &[f64],
    params: Option<&mut [f64]>,
) -> Vec<f64> {
    let grid = codec.grid();
    let g_raw: Vec<f64> = grad_out
        .iter()
        .zip(&tape.raw)
        .map(|(g, z)| if (0.0..=1.0).contains(z) { *g } else { 0.0 })
        .collect();
    let g_blocks = grid.gather_planar(&g_raw);
    let g_recv = codec.decode_adjoint(&g_blocks);
    // The channel's affine map, including the power normalization.
    let a = &tape.affine;
    let mut g_code: Vec<f64> = g_recv.iter().zip(&a.gains).map(|(g, k)| g * k).collect();
    if a.scale > 0.0 {
        let dot: f64 = g_recv.iter().zip(&a.offsets).map(|(g, e)| g * e).sum();
        let c = dot * 2.0 / (tape.code.len() as f64 * a.scale);
        g_code
            .iter_mut()
            .zip(&tape.code)
            .for_each(|(g, y)| *g += c * y);
    }
    if let (Some(params), SemanticCodec::Linear(lin)) = (params, codec) {
        let m = lin.per_block();
        let (ge, gd) = params.split_at_mut(m * BLOCK_LEN);
        for b in 0..grid.count() {
            let x = &tape.blocks[b * BLOCK_LEN..(b + 1) * BLOCK_LEN];
            let y = &tape.received[b * m..(b + 1) * m];
            let gz = &g_blocks[b * BLOCK_LEN..(b + 1) * BLOCK_LEN];
            let gy = &g_code[b * m..(b + 1) * m];
            for (r, &g) in gy.iter().enumerate() {
                if g != 0.0 {
                    ge[r * BLOCK_LEN..(r + 1) * BLOCK_LEN]
                        .iter_mut()
                        .zip(x)
                        .for_each(|(w, xv)| *w += g * xv);
                }
            }
            for (p, &g) in gz.iter().enumerate() {
                if g != 0.0 {
                    gd[p * m..(p + 1) * m]
                        .iter_mut()
                        .zip(y)
                        .for_each(|(w, yv)| *w += g * yv);
                }
            }
        }
    }
    grid.scatter(&codec.encode_adjoint(&g_code))
}

/// Forward state of the residual branch on one hop.
struct ResidualTape {
    means: Vec<[f64; 3]>,
    pre_out: Vec<[f64; 3]>,
    dequant: Vec<[f64; 3]>,
    post_raw: Vec<[f64; 3]>,
    cell_of: Vec<usize>,
    cell_pixels: Vec<f64>,
}

fn residual_forward(
    rc: &ResidualCompressor,
    h: usize,
    w: usize,
    input: &[f64],
    recon: &[f64],
) -> (Vec<f64>, ResidualTape) {
    let d = rc.block();
    let (rows, cols) = rc.grid_dims(h, w);
    let cells = rows * cols;
    let plane = h * w;
    let cell_of: Vec<usize> = (0..plane)
        .map(|i| (i / w / d) * cols + (i % w) / d)
        .collect();
    let mut sums = vec![[0.0; 3]; cells];
    let mut counts = vec![0.0; cells];
    for (i, &cell) in cell_of.iter().enumerate() {
        counts[cell] += 1.0;
        for c in 0..CHANNELS {
            sums[cell][c] += input[c * plane + i] - recon[c * plane + i];
        }
    }
    let means: Vec<[f64; 3]> = sums
        .iter()
        .zip(&counts)
        .map(|(s, n)| s.map(|v| v / n))
        .collect();
    let pre_out: Vec<[f64; 3]> = means.iter().map(|m| rc.pre.apply(*m)).collect();
    let dequant: Vec<[f64; 3]> = pre_out
        .iter()
        .map(|v| v.map(|x| rc.dequantize(rc.quantize(x))))
        .collect();
    let post_raw: Vec<[f64; 3]> = dequant.iter().map(|v| rc.post.apply(*v)).collect();
    let mut out = recon.to_vec();
    for (i, &cell) in cell_of.iter().enumerate() {
        for c in 0..CHANNELS {
            out[c * plane + i] += post_raw[cell][c].clamp(-1.0, 1.0);
        }
    }
    (
        out,
        ResidualTape {
            means,
            pre_out,
            dequant,
            post_raw,
            cell_of,
            cell_pixels: counts,
        },
    )
}

/// Backpropagates `grad_sum` (w.r.t. `ŝ + r̂` before clamping) into the
/// transform gradients `[pre(12), post(12)]`; returns the gradient w.r.t.
/// the residual `s - ŝ` per pixel.
fn residual_backward(
    rc: &ResidualCompressor,
    tape: &ResidualTape,
    plane: usize,
    grad_sum: &[f64],
    params: &mut [f64],
) -> Vec<f64> {
    let cells = tape.means.len();
    let mut g_cell = vec![[0.0; 3]; cells];
    for (i, &cell) in tape.cell_of.iter().enumerate() {
        for c in 0..CHANNELS {
            g_cell[cell][c] += grad_sum[c * plane + i];
        }
    }
    let (g_pre, g_post) = params.split_at_mut(12);
    let range = rc.range();
    let mut g_mean = vec![[0.0; 3]; cells];
    for cell in 0..cells {
        let gm: [f64; 3] = std::array::from_fn(|c| {
            if tape.post_raw[cell][c].abs() <= 1.0 {
                g_cell[cell][c]
            } else {
                0.0
            }
        });
        let v = tape.dequant[cell];
        let mut gv = [0.0; 3];
        for i in 0..3 {
            for j in 0..3 {
                g_post[3 * i + j] += gm[i] * v[j];
                gv[j] += rc.post.matrix[i][j] * gm[i];
            }
            g_post[9 + i] += gm[i];
        }
        // Straight-through quantizer, zero outside its range.
        let gw: [f64; 3] = std::array::from_fn(|c| {
            if tape.pre_out[cell][c].abs() <= range {
                gv[c]
            } else {
                0.0
            }
        });
        let mu = tape.means[cell];
        for i in 0..3 {
            for j in 0..3 {
                g_pre[3 * i + j] += gw[i] * mu[j];
                g_mean[cell][j] += rc.pre.matrix[i][j] * gw[i];
            }
            g_pre[9 + i] += gw[i];
        }
    }
    let mut g_res = vec![0.0; CHANNELS * plane];
    for (i, &cell) in tape.cell_of.iter().enumerate() {
        for c in 0..CHANNELS {
            g_res[c * plane + i] = g_mean[cell][c] / tape.cell_pixels[cell];
        }
    }
    g_res
}

#[derive(Clone, Copy)]
enum Trainable {
    Codec,
    Residual,
}

/// Loss of one chain realization and, optionally, its parameter gradient.
fn chain_pass(
    codec: &SemanticCodec,
    residual: Option<&ResidualCompressor>,
    img: &ImageTensor,
    cfg: &ChainTraining,
    seeds: &[u64],
    grads: Option<(&Trainable, &mut [f64])>,
) -> Result<f64> {
    let (h, w) = (img.height(), img.width());
    let plane = h * w;
    let n = cfg.hops;
    let mut inputs = vec![img.data().to_vec()];
    let mut codec_tapes = Vec::with_capacity(n);
    let mut res_tapes = Vec::with_capacity(n);
    let mut sums = Vec::with_capacity(n);
    let mut loss = 0.0;
    for hop in 0..n {
        let a = &inputs[hop];
        let (recon, tape) = codec_forward(codec, a, &cfg.link, seeds[hop])?;
        let (sum, out) = match residual {
            Some(rc) => {
                let (sum, rt) = residual_forward(rc, h, w, a, &recon);
                res_tapes.push(rt);
                let out = sum.iter().map(|v| v.clamp(0.0, 1.0)).collect();
                (Some(sum), out)
            }
            None => (None, recon),
        };
        let mse = a
            .iter()
            .zip(&out)
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            / a.len() as f64;
        loss += hop_weight(hop + 1, n, cfg.gamma) * mse;
        codec_tapes.push(tape);
        sums.push(sum);
        inputs.push(out);
    }
    loss /= n as f64;
    let Some((what, params)) = grads else {
        return Ok(loss);
    };
    let c = 2.0 / (3 * plane * n) as f64;
    let direct = |k: usize| -> Vec<f64> {
        let wk = c * hop_weight(k + 1, n, cfg.gamma);
        inputs[k + 1]
            .iter()
            .zip(&inputs[k])
            .map(|(b, a)| wk * (b - a))
            .collect()
    };
    // Gradient w.r.t. the output of the hop being processed.
    let mut g_out = direct(n - 1);
    for hop in (0..n).rev() {
        let mut g_in = direct(hop).iter().map(|v| -v).collect::<Vec<f64>>();
        let g_recon = match (&sums[hop], residual) {
            (Some(sum), Some(rc)) => {
                let g_sum: Vec<f64> = g_out
                    .iter()
                    .zip(sum)
                    .map(|(g, s)| if (0.0..=1.0).contains(s) { *g } else { 0.0 })
                    .collect();
                let mut scratch = vec![0.0; 24];
                let target: &mut [f64] = match what {
                    Trainable::Residual => params,
                    Trainable::Codec => &mut scratch,
                };
                let g_res = residual_backward(rc, &res_tapes[hop], plane, &g_sum, target);
                g_in.iter_mut().zip(&g_res).for_each(|(g, r)| *g += r);
                g_sum.iter().zip(&g_res).map(|(g, r)| g - r).collect()
            }
            _ => g_out.clone(),
        };
        let codec_params = match what {
            Trainable::Codec => Some(&mut *params),
            Trainable::Residual => None,
        };
        let g_x = codec_backward(codec, &codec_tapes[hop], &g_recon, codec_params);
        g_in.iter_mut().zip(&g_x).for_each(|(g, x)| *g += x);
        if hop > 0 {
            g_out = direct(hop - 1);
            g_out.iter_mut().zip(&g_in).for_each(|(g, x)| *g += x);
        }
    }
    Ok(loss)
}

fn hop_seeds(cfg: &ChainTraining, step: u64, image: usize, realization: usize) -> Vec<u64> {
    (0..cfg.hops)
        .map(|hop| {
            derive(
                cfg.seed,
                &[step, image as u64, realization as u64, hop as u64],
            )
        })
        .collect()
}

fn batch(
    codec: &SemanticCodec,
    residual: Option<&ResidualCompressor>,
    images: &[ImageTensor],
    cfg: &ChainTraining,
    step: u64,
    what: Option<&Trainable>,
    n_params: usize,
) -> Result<(f64, Vec<f64>)> {
    let jobs: Vec<(usize, usize)> = (0..images.len())
        .flat_map(|i| (0..cfg.realizations).map(move |r| (i, r)))
        .collect();
    let parts: Vec<Result<(f64, Vec<f64>)>> = jobs
        .par_iter()
        .map(|&(i, r)| {
            let seeds = hop_seeds(cfg, step, i, r);
            let mut g = vec![0.0; if what.is_some() { n_params } else { 0 }];
            let loss = chain_pass(
                codec,
                residual,
                &images[i],
                cfg,
                &seeds,
                what.map(|t| (t, g.as_mut_slice())),
            )?;
            Ok((loss, g))
        })
        .collect();
    let scale = 1.0 / jobs.len() as f64;
    let mut loss = 0.0;
    let mut grad = vec![0.0; n_params];
    for p in parts {
        let (l, g) = p?;
        loss += l * scale;
        grad.iter_mut().zip(&g).for_each(|(a, b)| *a += b * scale);
    }
    Ok((loss, grad))
}

/// Recursive chain loss on a fixed evaluation set of channel realizations,
/// with compensation when a compressor is given (its frame assumed delivered).
pub fn chain_loss(
    codec: &SemanticCodec,
    residual: Option<&ResidualCompressor>,
    images: &[ImageTensor],
    cfg: &ChainTraining,
) -> Result<f64> {
    cfg.check()?;
    check_codec(codec)?;
    Ok(batch(codec, residual, images, cfg, EVAL_LABEL, None, 0)?.0)
}

fn check_codec(codec: &SemanticCodec) -> Result<()> {
    if !codec.grid().is_exact() {
        return Err(Error::Config(
            "chain training needs image sides divisible by 8".into(),
        ));
    }
    Ok(())
}

fn check_divergence(step: usize, loss: f64, initial: f64) -> Result<()> {
    if !loss.is_finite() || loss > 10.0 * initial {
        return Err(Error::Divergence {
            step,
            loss,
            initial,
        });
    }
    Ok(())
}

/// Evaluation loss before and after training, with the per-step training
/// losses in between.
#[derive(Debug, Clone, PartialEq)]
pub struct LossCurve {
    pub initial: f64,
    pub steps: Vec<f64>,
    pub last: f64,
}

/// Stage 1: Adam on the recursive loss of the uncompensated chain, with one
/// weight set shared by every hop.
pub fn train_stage1(
    codec: &mut LinearCodec,
    images: &[ImageTensor],
    cfg: &ChainTraining,
) -> Result<LossCurve> {
    let mut current = SemanticCodec::Linear(codec.clone());
    let initial = chain_loss(&current, None, images, cfg)?;
    let split = codec.encoder.len();
    let n_params = split + codec.decoder.len();
    let mut opt = Adam::new(n_params, cfg.schedule.base);
    let mut params: Vec<f64> = codec
        .encoder
        .iter()
        .chain(&codec.decoder)
        .copied()
        .collect();
    let mut steps = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let (loss, grad) = batch(
            &current,
            None,
            images,
            cfg,
            step as u64,
            Some(&Trainable::Codec),
            n_params,
        )?;
        check_divergence(step, loss, initial)?;
        steps.push(loss);
        opt.learning_rate = cfg.schedule.at(step);
        opt.step(&mut params, &grad);
        codec.encoder.copy_from_slice(&params[..split]);
        codec.decoder.copy_from_slice(&params[split..]);
        current = SemanticCodec::Linear(codec.clone());
    }
    let last = chain_loss(&current, None, images, cfg)?;
    Ok(LossCurve {
        initial,
        steps,
        last,
    })
}

/// Stage 2: trains the compressor's colour transforms on the compensated
/// chain with the codec frozen.
pub fn train_stage2(
    codec: &SemanticCodec,
    compressor: &mut ResidualCompressor,
    images: &[ImageTensor],
    cfg: &ChainTraining,
) -> Result<LossCurve> {
    let initial = chain_loss(codec, Some(compressor), images, cfg)?;
    let mut opt = Adam::new(24, cfg.schedule.base);
    let mut params: Vec<f64> = compressor
        .pre
        .to_vec()
        .into_iter()
        .chain(compressor.post.to_vec())
        .collect();
    let mut steps = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let (loss, grad) = batch(
            codec,
            Some(compressor),
            images,
            cfg,
            step as u64,
            Some(&Trainable::Residual),
            24,
        )?;
        check_divergence(step, loss, initial)?;
        steps.push(loss);
        opt.learning_rate = cfg.schedule.at(step);
        opt.step(&mut params, &grad);
        compressor.pre = ColorAffine::from_slice(&params[..12]);
        compressor.post = ColorAffine::from_slice(&params[12..]);
    }
    let last = chain_loss(codec, Some(compressor), images, cfg)?;
    Ok(LossCurve {
        initial,
        steps,
        last,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::LinearInit;
    use crate::corpus::synthetic_image;

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
    }

    fn setup(hops: usize, fading_ideal: bool) -> (SemanticCodec, ImageTensor, ChainTraining) {
        let codec = SemanticCodec::Linear(
            LinearCodec::new(16, 16, 3 * 4 * 6, LinearInit::Random { seed: 3 }).unwrap(),
        );
        let img = synthetic_image(16, 16, 5).unwrap();
        let link = if fading_ideal {
            LinkChannel::ideal()
        } else {
            LinkChannel::rayleigh(10.0)
        };
        let cfg = ChainTraining {
            hops,
            link,
            ..ChainTraining::default()
        };
        (codec, img, cfg)
    }

    #[test]
    fn codec_gradient_matches_finite_differences() {
        for ideal in [true, false] {
            let (codec, img, cfg) = setup(3, ideal);
            let SemanticCodec::Linear(lin) = codec.clone() else {
                unreachable!()
            };
            let seeds = hop_seeds(&cfg, 0, 0, 0);
            let n = lin.encoder.len() + lin.decoder.len();
            let mut g = vec![0.0; n];
            chain_pass(
                &codec,
                None,
                &img,
                &cfg,
                &seeds,
                Some((&Trainable::Codec, &mut g)),
            )
            .unwrap();
            let split = lin.encoder.len();
            for idx in (0..n).step_by(37) {
                let eps = 1e-6;
                fn param(c: &mut LinearCodec, idx: usize, split: usize) -> &mut f64 {
                    if idx < split {
                        &mut c.encoder[idx]
                    } else {
                        &mut c.decoder[idx - split]
                    }
                }
                let at = |delta: f64| {
                    let mut c = lin.clone();
                    *param(&mut c, idx, split) += delta;
                    chain_pass(&SemanticCodec::Linear(c), None, &img, &cfg, &seeds, None).unwrap()
                };
                let (lp, lm) = (at(eps), at(-eps));
                let fd = (lp - lm) / (2.0 * eps);
                assert!(
                    rel(g[idx], fd) < 1e-4 || (g[idx] - fd).abs() < 1e-9,
                    "param {idx}: {} vs {fd}",
                    g[idx]
                );
            }
        }
    }

    #[test]
    fn post_transform_gradient_matches_finite_differences() {
        let (_, img, cfg) = setup(1, false);
        let codec = SemanticCodec::BlockDct(crate::codec::BlockDct::new(16, 16, 72).unwrap());
        let mut rc = ResidualCompressor::new(4, 33, 1.0).unwrap();
        rc.post.matrix[0][1] = 0.2;
        rc.post.offset[2] = -0.05;
        let seeds = hop_seeds(&cfg, 0, 0, 0);
        let mut g = vec![0.0; 24];
        chain_pass(
            &codec,
            Some(&rc),
            &img,
            &cfg,
            &seeds,
            Some((&Trainable::Residual, &mut g)),
        )
        .unwrap();
        for idx in 12..24 {
            let eps = 1e-6;
            let mut v = rc.post.to_vec();
            let at = |v: &[f64]| {
                let mut r = rc.clone();
                r.post = ColorAffine::from_slice(v);
                chain_pass(&codec, Some(&r), &img, &cfg, &seeds, None).unwrap()
            };
            v[idx - 12] += eps;
            let lp = at(&v);
            v[idx - 12] -= 2.0 * eps;
            let lm = at(&v);
            let fd = (lp - lm) / (2.0 * eps);
            assert!(
                rel(g[idx], fd) < 1e-4 || (g[idx] - fd).abs() < 1e-9,
                "post {idx}: {} vs {fd}",
                g[idx]
            );
        }
    }

    #[test]
    fn loss_reduces_to_weighted_hop_mse() {
        let (codec, img, cfg) = setup(2, true);
        let seeds = hop_seeds(&cfg, 0, 0, 0);
        let loss = chain_pass(&codec, None, &img, &cfg, &seeds, None).unwrap();
        let (b1, _) = codec_forward(&codec, img.data(), &cfg.link, seeds[0]).unwrap();
        let (b2, _) = codec_forward(&codec, &b1, &cfg.link, seeds[1]).unwrap();
        let mse = |a: &[f64], b: &[f64]| {
            a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len() as f64
        };
        let expected = (cfg.gamma * mse(img.data(), &b1) + mse(&b1, &b2)) / 2.0;
        assert!((loss - expected).abs() < 1e-15);
    }
}
