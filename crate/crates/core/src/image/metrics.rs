use super::{ImageTensor, Shape, CHANNELS};
use crate::error::{Error, Result};

/// Canonical 5-scale MS-SSIM exponents, finest scale first.
pub const MS_SSIM_WEIGHTS: [f64; 5] = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];

const WINDOW: usize = 11;
const WINDOW_SIGMA: f64 = 1.5;
const C1: f64 = 0.01 * 0.01;
const C2: f64 = 0.03 * 0.03;

/// Peak-1 PSNR in dB; `f64::INFINITY` for identical images.
pub fn psnr(a: &ImageTensor, b: &ImageTensor) -> Result<f64> {
    let mse = a.mse(b)?;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (1.0 / mse).log10())
}

/// Number of dyadic scales an image of the given short side supports.
pub fn ms_ssim_scales(min_side: usize) -> usize {
    (1..=MS_SSIM_WEIGHTS.len())
        .rev()
        .find(|&m| min_side > (WINDOW - 1) << (m - 1))
        .unwrap_or(0)
}

/// Multi-scale SSIM averaged over the three channels.
///
/// Uses as many of the five canonical scales as the image supports and
/// renormalizes their exponents to sum to one.
pub fn ms_ssim(a: &ImageTensor, b: &ImageTensor) -> Result<f64> {
    if a.dims() != b.dims() {
        return Err(Error::Dimension(format!(
            "{:?} vs {:?}",
            a.dims(),
            b.dims()
        )));
    }
    let scales = ms_ssim_scales(a.height().min(a.width()));
    if scales == 0 {
        return Err(Error::Config(format!(
            "{}x{} image is smaller than the {WINDOW}x{WINDOW} window",
            a.height(),
            a.width()
        )));
    }
    let wsum: f64 = MS_SSIM_WEIGHTS[..scales].iter().sum();
    let weights: Vec<f64> = MS_SSIM_WEIGHTS[..scales].iter().map(|w| w / wsum).collect();
    let kernel = gaussian_kernel();

    let mut total = 0.0;
    for c in 0..CHANNELS {
        let mut x = a.plane(c).to_vec();
        let mut y = b.plane(c).to_vec();
        let (mut h, mut w) = (a.height(), a.width());
        let mut value = 1.0;
        for (j, &weight) in weights.iter().enumerate() {
            let (ssim, cs) = ssim_and_cs(&x, &y, h, w, &kernel);
            let term = if j + 1 == scales { ssim } else { cs };
            value *= term.max(0.0).powf(weight);
            if j + 1 < scales {
                x = downsample(&x, h, w);
                y = downsample(&y, h, w);
                h /= 2;
                w /= 2;
            }
        }
        total += value;
    }
    Ok(total / CHANNELS as f64)
}

fn gaussian_kernel() -> [f64; WINDOW] {
    let mut k = [0.0; WINDOW];
    let half = (WINDOW / 2) as f64;
    for (i, v) in k.iter_mut().enumerate() {
        let d = i as f64 - half;
        *v = (-d * d / (2.0 * WINDOW_SIGMA * WINDOW_SIGMA)).exp();
    }
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

/// Separable "valid" Gaussian filtering.
fn filter_valid(src: &[f64], h: usize, w: usize, k: &[f64; WINDOW]) -> Vec<f64> {
    let ow = w - WINDOW + 1;
    let oh = h - WINDOW + 1;
    let mut rows = vec![0.0; h * ow];
    for u in 0..h {
        let line = &src[u * w..(u + 1) * w];
        for v in 0..ow {
            rows[u * ow + v] = line[v..v + WINDOW].iter().zip(k).map(|(a, b)| a * b).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for u in 0..oh {
        for (t, kt) in k.iter().enumerate() {
            let line = &rows[(u + t) * ow..(u + t + 1) * ow];
            for (o, r) in out[u * ow..(u + 1) * ow].iter_mut().zip(line) {
                *o += kt * r;
            }
        }
    }
    out
}

fn ssim_and_cs(x: &[f64], y: &[f64], h: usize, w: usize, k: &[f64; WINDOW]) -> (f64, f64) {
    let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.iter().zip(y).map(|(a, b)| a * b).collect();
    let mx = filter_valid(x, h, w, k);
    let my = filter_valid(y, h, w, k);
    let mxx = filter_valid(&xx, h, w, k);
    let myy = filter_valid(&yy, h, w, k);
    let mxy = filter_valid(&xy, h, w, k);
    let n = mx.len() as f64;
    let (mut ssim, mut cs) = (0.0, 0.0);
    for i in 0..mx.len() {
        let sx = mxx[i] - mx[i] * mx[i];
        let sy = myy[i] - my[i] * my[i];
        let sxy = mxy[i] - mx[i] * my[i];
        let cs_i = (2.0 * sxy + C2) / (sx + sy + C2);
        let l_i = (2.0 * mx[i] * my[i] + C1) / (mx[i] * mx[i] + my[i] * my[i] + C1);
        cs += cs_i;
        ssim += l_i * cs_i;
    }
    (ssim / n, cs / n)
}

fn downsample(src: &[f64], h: usize, w: usize) -> Vec<f64> {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = vec![0.0; oh * ow];
    for u in 0..oh {
        for v in 0..ow {
            let i = 2 * u * w + 2 * v;
            out[u * ow + v] = 0.25 * (src[i] + src[i + 1] + src[i + w] + src[i + w + 1]);
        }
    }
    out
}
