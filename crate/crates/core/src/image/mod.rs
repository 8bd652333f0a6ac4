//! Planar RGB image tensors in unit scale, residual arithmetic, file I/O and
//! quality metrics.
//!
//! Pixels are stored channel-major: `data[c * H * W + u * W + v]` for channel
//! `c`, row `u` and column `v`.

mod io;
mod metrics;

pub use io::{load_image, save_image, ImageFormat};
pub use metrics::{ms_ssim, ms_ssim_scales, psnr, MS_SSIM_WEIGHTS};

use crate::error::{Error, Result};

pub const CHANNELS: usize = 3;

/// H×W×3 image with values in [0,1].
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

/// Signed difference of two images, same layout as [`ImageTensor`].
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualTensor {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

macro_rules! planar_accessors {
    ($ty:ident) => {
        impl $ty {
            pub fn height(&self) -> usize {
                self.height
            }

            pub fn width(&self) -> usize {
                self.width
            }

            pub fn data(&self) -> &[f64] {
                &self.data
            }

            pub fn into_data(self) -> Vec<f64> {
                self.data
            }

            pub fn plane(&self, c: usize) -> &[f64] {
                let n = self.height * self.width;
                &self.data[c * n..(c + 1) * n]
            }

            #[inline]
            pub fn get(&self, c: usize, u: usize, v: usize) -> f64 {
                self.data[(c * self.height + u) * self.width + v]
            }

            pub fn same_shape<T: Shape>(&self, other: &T) -> bool {
                self.height == other.dims().0 && self.width == other.dims().1
            }
        }

        impl Shape for $ty {
            fn dims(&self) -> (usize, usize) {
                (self.height, self.width)
            }
        }
    };
}

/// Anything with an H×W×3 geometry.
pub trait Shape {
    fn dims(&self) -> (usize, usize);
}

planar_accessors!(ImageTensor);
planar_accessors!(ResidualTensor);

fn check_len(height: usize, width: usize, len: usize) -> Result<()> {
    if height == 0 || width == 0 {
        return Err(Error::Dimension(format!("empty image {height}x{width}")));
    }
    if height * width * CHANNELS != len {
        return Err(Error::Dimension(format!(
            "{height}x{width}x3 needs {} values, got {len}",
            height * width * CHANNELS
        )));
    }
    Ok(())
}

impl ImageTensor {
    /// Wraps planar data; values must be finite and inside [0,1].
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        check_len(height, width, data.len())?;
        if let Some(i) = data.iter().position(|x| !(0.0..=1.0).contains(x)) {
            return Err(Error::Degenerate(format!(
                "pixel {i} = {} outside [0,1]",
                data[i]
            )));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    /// Wraps planar data, clamping every value into [0,1]. NaN maps to 0.
    pub fn from_clamped(height: usize, width: usize, mut data: Vec<f64>) -> Result<Self> {
        check_len(height, width, data.len())?;
        for x in &mut data {
            *x = if x.is_nan() { 0.0 } else { x.clamp(0.0, 1.0) };
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Result<Self> {
        Self::new(height, width, vec![value; height * width * CHANNELS])
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn mse(&self, other: &ImageTensor) -> Result<f64> {
        require_same(self, other)?;
        let sum: f64 = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        Ok(sum / self.data.len() as f64)
    }
}

impl ResidualTensor {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        check_len(height, width, data.len())?;
        if let Some(i) = data.iter().position(|x| !(-1.0..=1.0).contains(x)) {
            return Err(Error::Degenerate(format!(
                "residual {i} = {} outside [-1,1]",
                data[i]
            )));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![0.0; height * width * CHANNELS],
        }
    }
}

fn require_same<A: Shape, B: Shape>(a: &A, b: &B) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::Dimension(format!(
            "{:?} vs {:?}",
            a.dims(),
            b.dims()
        )));
    }
    Ok(())
}

/// `a - b`, unclamped.
pub fn residual(a: &ImageTensor, b: &ImageTensor) -> Result<ResidualTensor> {
    require_same(a, b)?;
    let data = a.data.iter().zip(&b.data).map(|(x, y)| x - y).collect();
    Ok(ResidualTensor {
        height: a.height,
        width: a.width,
        data,
    })
}

/// `recon + res`, clamped to [0,1].
pub fn compensate(recon: &ImageTensor, res: &ResidualTensor) -> Result<ImageTensor> {
    require_same(recon, res)?;
    let data = recon
        .data
        .iter()
        .zip(&res.data)
        .map(|(x, r)| (x + r).clamp(0.0, 1.0))
        .collect();
    Ok(ImageTensor {
        height: recon.height,
        width: recon.width,
        data,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(rng: &mut ChaCha8Rng, h: usize, w: usize) -> ImageTensor {
        let data = (0..h * w * 3).map(|_| rng.random::<f64>()).collect();
        ImageTensor::new(h, w, data).unwrap()
    }

    #[test]
    fn residual_of_equal_images_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = random_image(&mut rng, 5, 7);
        assert!(residual(&a, &a).unwrap().data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn residual_constant_case() {
        let a = ImageTensor::filled(4, 4, 1.0).unwrap();
        let b = ImageTensor::filled(4, 4, 0.25).unwrap();
        assert!(residual(&a, &b).unwrap().data().iter().all(|&x| x == 0.75));
    }

    #[test]
    fn residual_matches_scalar_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (h, w) = (6, 9);
        let a = random_image(&mut rng, h, w);
        let b = random_image(&mut rng, h, w);
        let r = residual(&a, &b).unwrap();
        for c in 0..3 {
            for u in 0..h {
                for v in 0..w {
                    assert_eq!(r.get(c, u, v), a.get(c, u, v) - b.get(c, u, v));
                }
            }
        }
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let a = ImageTensor::filled(4, 4, 0.5).unwrap();
        let b = ImageTensor::filled(4, 5, 0.5).unwrap();
        assert!(matches!(residual(&a, &b), Err(Error::Dimension(_))));
        let r = ResidualTensor::zeros(5, 4);
        assert!(matches!(compensate(&a, &r), Err(Error::Dimension(_))));
    }

    #[test]
    fn compensate_identity_inverse_and_clamp() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_image(&mut rng, 8, 8);
        let b = random_image(&mut rng, 8, 8);
        assert_eq!(compensate(&a, &ResidualTensor::zeros(8, 8)).unwrap(), a);
        let back = compensate(&b, &residual(&a, &b).unwrap()).unwrap();
        for (x, y) in back.data().iter().zip(a.data()) {
            assert!((x - y).abs() < 1e-15);
        }
        let recon = ImageTensor::filled(2, 2, 0.9).unwrap();
        let res = ResidualTensor::new(2, 2, vec![0.3; 12]).unwrap();
        assert!(compensate(&recon, &res)
            .unwrap()
            .data()
            .iter()
            .all(|&x| x == 1.0));
    }

    #[test]
    fn constructor_rejects_out_of_range() {
        assert!(ImageTensor::new(1, 1, vec![0.0, 1.2, 0.5]).is_err());
        assert!(ImageTensor::new(1, 2, vec![0.0; 3]).is_err());
        let img = ImageTensor::from_clamped(1, 1, vec![-0.5, 2.0, f64::NAN]).unwrap();
        assert_eq!(img.data(), &[0.0, 1.0, 0.0]);
    }
}
