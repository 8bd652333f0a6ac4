//! Seeded synthetic texture images: smooth Gaussian random fields in a random
//! colour basis, overlaid with hard-edged shapes and fine grain.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::Result;
use crate::image::{save_image, ImageFormat, ImageTensor, CHANNELS};
use crate::seed::derive;

pub fn synthetic_image(height: usize, width: usize, seed: u64) -> Result<ImageTensor> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let n = height * width;

    // three smooth fields at different correlation lengths
    let mut fields = Vec::with_capacity(3);
    for _ in 0..3 {
        let noise: Vec<f64> = (0..n).map(|_| normal.sample(&mut rng)).collect();
        let sigma = rng.random_range(2.0..12.0);
        let mut f = gaussian_blur(&noise, height, width, sigma);
        let std = (f.iter().map(|x| x * x).sum::<f64>() / n as f64)
            .sqrt()
            .max(1e-12);
        f.iter_mut().for_each(|x| *x /= std);
        fields.push(f);
    }
    let mut data = vec![0.0; CHANNELS * n];
    for c in 0..CHANNELS {
        let base = rng.random_range(0.3..0.7);
        let mix: Vec<f64> = (0..3).map(|_| rng.random_range(-0.12..0.12)).collect();
        for i in 0..n {
            data[c * n + i] = base + (0..3).map(|j| mix[j] * fields[j][i]).sum::<f64>();
        }
    }

    let shapes = rng.random_range(3..8);
    for _ in 0..shapes {
        let colour: Vec<f64> = (0..CHANNELS)
            .map(|_| rng.random_range(0.05..0.95))
            .collect();
        let alpha = rng.random_range(0.5..1.0);
        let kind = rng.random_range(0..3);
        let (cu, cv) = (
            rng.random_range(0.0..height as f64),
            rng.random_range(0.0..width as f64),
        );
        let size = rng.random_range(0.08..0.35) * height.min(width) as f64;
        let (hu, hv) = (size, rng.random_range(0.5..1.5) * size);
        let angle: f64 = rng.random_range(0.0..std::f64::consts::PI);
        let (sa, ca) = angle.sin_cos();
        for u in 0..height {
            for v in 0..width {
                let (du, dv) = (u as f64 - cu, v as f64 - cv);
                let inside = match kind {
                    0 => (du * du) / (hu * hu) + (dv * dv) / (hv * hv) <= 1.0,
                    1 => {
                        let (ru, rv) = (ca * du + sa * dv, -sa * du + ca * dv);
                        ru.abs() <= hu && rv.abs() <= hv
                    }
                    _ => ca * du + sa * dv > 0.0 && (du * du + dv * dv).sqrt() < 2.5 * size,
                };
                if inside {
                    for c in 0..CHANNELS {
                        let x = &mut data[c * n + u * width + v];
                        *x = (1.0 - alpha) * *x + alpha * colour[c];
                    }
                }
            }
        }
    }

    let grain = rng.random_range(0.0..0.03);
    for x in data.iter_mut() {
        *x += grain * normal.sample(&mut rng);
    }
    ImageTensor::from_clamped(height, width, data)
}

/// `count` images whose seeds are derived from `seed`.
pub fn synthetic_corpus(
    count: usize,
    height: usize,
    width: usize,
    seed: u64,
) -> Result<Vec<ImageTensor>> {
    (0..count)
        .map(|i| synthetic_image(height, width, derive(seed, &[i as u64])))
        .collect()
}

/// Writes `img_0000.png`, `img_0001.png`, … into `dir`.
pub fn write_corpus(dir: impl AsRef<Path>, images: &[ImageTensor]) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| crate::Error::io(dir, e))?;
    for (i, img) in images.iter().enumerate() {
        save_image(img, dir.join(format!("img_{i:04}.png")), ImageFormat::Png)?;
    }
    Ok(())
}

fn gaussian_blur(src: &[f64], h: usize, w: usize, sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as isize;
    let kernel: Vec<f64> = (-radius..=radius)
        .map(|d| (-(d * d) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let wrap = |i: isize, n: usize| i.rem_euclid(n as isize) as usize;
    let mut tmp = vec![0.0; h * w];
    for u in 0..h {
        for v in 0..w {
            tmp[u * w + v] = kernel
                .iter()
                .enumerate()
                .map(|(j, k)| k * src[u * w + wrap(v as isize + j as isize - radius, w)])
                .sum();
        }
    }
    let mut out = vec![0.0; h * w];
    for u in 0..h {
        for v in 0..w {
            out[u * w + v] = kernel
                .iter()
                .enumerate()
                .map(|(j, k)| k * tmp[wrap(u as isize + j as isize - radius, h) * w + v])
                .sum();
        }
    }
    out
}
