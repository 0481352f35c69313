//! Disk blur, additive-noise corruption and PSNR.

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::rng::rng_for;
use crate::tensor::Tensor;

/// Taps are integer multiples of this, so every partial sum of a kernel is exact.
const TAP_QUANTUM: f64 = 1.0 / (1u64 << 40) as f64;

/// PSNR reported for identical images.
pub const PSNR_CAP: f64 = 100.0;

#[derive(Debug, Clone, PartialEq)]
pub struct DiskKernel {
    pub radius: usize,
    /// `(2r+1) x (2r+1)`, centered.
    pub taps: Tensor<f64>,
}

impl DiskKernel {
    /// Uniform binary disk `i^2 + j^2 <= r^2`; taps sum to exactly 1 (the rounding
    /// remainder sits on the center tap).
    pub fn new(radius: usize) -> Result<Self> {
        if radius == 0 {
            return Err(invalid!("disk radius must be at least 1"));
        }
        let r = radius as isize;
        let side = 2 * radius + 1;
        let inside = |i: isize, j: isize| i * i + j * j <= r * r;
        let n = (-r..=r)
            .flat_map(|i| (-r..=r).map(move |j| (i, j)))
            .filter(|&(i, j)| inside(i, j))
            .count() as u64;
        let units = (1u64 << 40) / n;
        let center = (1u64 << 40) - units * (n - 1);
        let mut taps = vec![0.0; side * side];
        for i in -r..=r {
            for j in -r..=r {
                if inside(i, j) {
                    let u = if i == 0 && j == 0 { center } else { units };
                    taps[((i + r) as usize) * side + (j + r) as usize] = u as f64 * TAP_QUANTUM;
                }
            }
        }
        Ok(DiskKernel {
            radius,
            taps: Tensor::from_vec(&[side, side], taps)?,
        })
    }

    pub fn side(&self) -> usize {
        2 * self.radius + 1
    }

    /// Non-zero taps as `(di, dj, weight)`.
    pub fn support(&self) -> Vec<(isize, isize, f64)> {
        let r = self.radius as isize;
        let side = self.side();
        let mut out = Vec::new();
        for (k, &w) in self.taps.data().iter().enumerate() {
            if w > 0.0 {
                out.push(((k / side) as isize - r, (k % side) as isize - r, w));
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Border {
    /// Mirror without repeating the edge pixel.
    Reflect,
    Periodic,
}

fn wrap(i: isize, n: usize, border: Border) -> usize {
    match border {
        Border::Reflect => crate::crowd::sampling::reflect_index(i, n),
        Border::Periodic => i.rem_euclid(n as isize) as usize,
    }
}

/// Convolution of `image[H, W]` with the disk kernel of radius `r`.
pub fn disk_blur(image: &Tensor<f64>, radius: usize, border: Border) -> Result<Tensor<f64>> {
    let (rows, cols) = image.dims2()?;
    let kernel = DiskKernel::new(radius)?;
    if kernel.side() > rows || kernel.side() > cols {
        return Err(invalid!(
            "disk of radius {radius} does not fit a {rows}x{cols} image"
        ));
    }
    let support = kernel.support();
    let src = image.data();
    let mut out = vec![0.0; rows * cols];
    for i in 0..rows {
        for j in 0..cols {
            let mut acc = 0.0;
            for &(di, dj, w) in &support {
                let (si, sj) = (
                    wrap(i as isize + di, rows, border),
                    wrap(j as isize + dj, cols, border),
                );
                acc += w * src[si * cols + sj];
            }
            out[i * cols + j] = acc;
        }
    }
    Tensor::from_vec(&[rows, cols], out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorruptionConfig {
    pub radii: Vec<usize>,
    /// Standard deviation of the additive Gaussian noise on the `[0, 1]` scale.
    pub sigma: f64,
    pub seed: u64,
}

impl CorruptionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.radii.is_empty() || self.radii.contains(&0) {
            return Err(invalid!("radii must be a non-empty list of integers >= 1"));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(invalid!("noise std must be finite and non-negative"));
        }
        Ok(())
    }
}

/// Reflect-border disk blur, then Gaussian noise, then clamping to `[0, 1]`.
///
/// `stream` selects an independent noise stream under the config's seed.
pub fn corrupt(
    image: &Tensor<f64>,
    cfg: &CorruptionConfig,
    radius: usize,
    stream: u64,
) -> Result<Tensor<f64>> {
    cfg.validate()?;
    let mut out = disk_blur(image, radius, Border::Reflect)?;
    if cfg.sigma > 0.0 {
        let noise = Normal::new(0.0, cfg.sigma).map_err(|e| invalid!("{e}"))?;
        let mut rng = rng_for(cfg.seed, &format!("corrupt/r{radius}"), stream);
        for v in out.data_mut() {
            *v = (*v + noise.sample(&mut rng)).clamp(0.0, 1.0);
        }
    } else {
        for v in out.data_mut() {
            *v = v.clamp(0.0, 1.0);
        }
    }
    Ok(out)
}

/// `10 log10(1 / MSE)` for images on a unit peak; identical images give [`PSNR_CAP`].
pub fn psnr(reference: &Tensor<f64>, test: &Tensor<f64>) -> Result<f64> {
    reference.same_shape(test, "psnr")?;
    if reference.is_empty() {
        return Err(invalid!("psnr of empty images"));
    }
    let mse = reference
        .data()
        .iter()
        .zip(test.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / reference.len() as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(PSNR_CAP))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng as _;

    fn random_image(rows: usize, cols: usize, seed: u64) -> Tensor<f64> {
        let mut rng = rng_for(seed, "test-image", 0);
        Tensor::from_vec(&[rows, cols], (0..rows * cols).map(|_| rng.gen::<f64>()).collect()).unwrap()
    }

    #[test]
    fn kernel_support_and_exact_mass() {
        for r in 1..=15 {
            let k = DiskKernel::new(r).unwrap();
            let ri = r as isize;
            let side = k.side();
            let mut sum = 0.0;
            for (idx, &w) in k.taps.data().iter().enumerate() {
                let (i, j) = ((idx / side) as isize - ri, (idx % side) as isize - ri);
                assert_eq!(w > 0.0, i * i + j * j <= ri * ri, "r={r} ({i},{j})");
                let mirror_i = ((-i + ri) as usize) * side + (j + ri) as usize;
                let mirror_j = ((i + ri) as usize) * side + (-j + ri) as usize;
                assert_eq!(w, k.taps.data()[mirror_i]);
                assert_eq!(w, k.taps.data()[mirror_j]);
                sum += w;
            }
            assert_eq!(sum, 1.0, "r={r}");
        }
        assert!(DiskKernel::new(0).is_err());
    }

    #[test]
    fn radius_one_is_a_plus_sign() {
        let k = DiskKernel::new(1).unwrap();
        let nz: Vec<bool> = k.taps.data().iter().map(|&w| w > 0.0).collect();
        assert_eq!(nz, vec![false, true, false, true, true, true, false, true, false]);
    }

    #[test]
    fn constant_image_is_unchanged() {
        let img = Tensor::full(&[20, 24], 0.37).unwrap();
        for border in [Border::Reflect, Border::Periodic] {
            let out = disk_blur(&img, 5, border).unwrap();
            assert!(out.data().iter().all(|&v| (v - 0.37).abs() < 1e-12));
        }
    }

    #[test]
    fn delta_reproduces_the_kernel() {
        let r = 3;
        let mut img = Tensor::zeros(&[21, 21]).unwrap();
        img.data_mut()[10 * 21 + 10] = 1.0;
        let out = disk_blur(&img, r, Border::Reflect).unwrap();
        let k = DiskKernel::new(r).unwrap();
        for i in 0..7 {
            for j in 0..7 {
                assert_eq!(out.data()[(7 + i) * 21 + 7 + j], k.taps.data()[i * 7 + j]);
            }
        }
        assert!((out.sum() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn oversized_kernel_is_rejected() {
        let img = Tensor::zeros(&[10, 30]).unwrap();
        assert!(disk_blur(&img, 5, Border::Reflect).is_err());
        assert!(disk_blur(&img, 4, Border::Reflect).is_ok());
    }

    #[test]
    fn noise_statistics_and_determinism() {
        let img = Tensor::full(&[128, 128], 0.5).unwrap();
        let cfg = CorruptionConfig {
            radii: vec![3],
            sigma: 0.05,
            seed: 11,
        };
        let a = corrupt(&img, &cfg, 3, 0).unwrap();
        assert_eq!(a, corrupt(&img, &cfg, 3, 0).unwrap());
        assert_ne!(a, corrupt(&img, &cfg, 3, 1).unwrap());
        let n = a.len() as f64;
        let mean = a.sum() / n;
        let std = (a.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        assert!((std / 0.05 - 1.0).abs() < 0.05, "{std}");
        let quiet = CorruptionConfig { sigma: 0.0, ..cfg };
        let img = random_image(32, 32, 2);
        assert_eq!(
            corrupt(&img, &quiet, 3, 0).unwrap(),
            disk_blur(&img, 3, Border::Reflect).unwrap()
        );
    }

    #[test]
    fn corpus_psnr_falls_with_radius() {
        let images: Vec<Tensor<f64>> = (0..40).map(|k| crate::deconv::procedural_image(64, 4, k)).collect();
        let mean: Vec<f64> = [3, 5, 7, 9, 11]
            .into_iter()
            .map(|r| {
                images
                    .iter()
                    .map(|img| psnr(img, &disk_blur(img, r, Border::Reflect).unwrap()).unwrap())
                    .sum::<f64>()
                    / images.len() as f64
            })
            .collect();
        assert!(mean.windows(2).all(|w| w[0] > w[1]), "{mean:?}");
    }

    #[test]
    fn psnr_reference_values() {
        let zero = Tensor::zeros(&[4, 4]).unwrap();
        let one = Tensor::full(&[4, 4], 1.0).unwrap();
        assert_eq!(psnr(&zero, &zero).unwrap(), PSNR_CAP);
        assert_eq!(psnr(&zero, &one).unwrap(), 0.0);
        let tenth = Tensor::full(&[4, 4], 0.1).unwrap();
        assert!((psnr(&zero, &tenth).unwrap() - 20.0).abs() < 1e-9);
        assert!(psnr(&zero, &Tensor::zeros(&[4, 5]).unwrap()).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn periodic_blur_preserves_the_mean(seed in 0u64..1000, r in 1usize..6) {
            let img = random_image(16, 20, seed);
            let out = disk_blur(&img, r, Border::Periodic).unwrap();
            let n = img.len() as f64;
            prop_assert!((out.sum() / n - img.sum() / n).abs() < 1e-6);
        }
    }
}
