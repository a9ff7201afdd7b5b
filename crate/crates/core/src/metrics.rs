//! PSNR and SSIM for images with dynamic range 1.
//!
//! SSIM uses an 11×11 Gaussian window (σ = 1.5), `K1 = 0.01`, `K2 = 0.03`,
//! population (biased) variances, and only windows that lie fully inside the
//! image. Multi-channel images average the per-channel means.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::image::ImageTensor;

/// Reported PSNR for identical images.
pub const PSNR_CAP_DB: f64 = 99.0;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const K1: f64 = 0.01;
const K2: f64 = 0.03;

fn check_pair(a: &ImageTensor, b: &ImageTensor) -> Result<()> {
    if !a.same_shape(b) {
        return Err(Error::invalid(format!(
            "metric inputs differ in shape: {}x{}x{} vs {}x{}x{}",
            a.channels(),
            a.height(),
            a.width(),
            b.channels(),
            b.height(),
            b.width()
        )));
    }
    Ok(())
}

/// Mean squared error in double precision.
pub fn mse(a: &ImageTensor, b: &ImageTensor) -> Result<f64> {
    check_pair(a, b)?;
    let sum: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum();
    Ok(sum / a.data().len() as f64)
}

/// `10·log10(1 / MSE)` dB, capped at [`PSNR_CAP_DB`].
pub fn psnr(a: &ImageTensor, b: &ImageTensor) -> Result<f64> {
    let m = mse(a, b)?;
    if m == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (1.0 / m).log10()).min(PSNR_CAP_DB))
}

/// Normalized 1-D Gaussian taps.
pub fn gaussian_window(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let raw: Vec<f64> = (0..size)
        .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / total).collect()
}

/// Separable valid-mode filter of an `h × w` plane.
fn filter_valid(src: &[f64], h: usize, w: usize, taps: &[f64]) -> Vec<f64> {
    let n = taps.len();
    let (oh, ow) = (h - n + 1, w - n + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        let s = &src[y * w..(y + 1) * w];
        for x in 0..ow {
            rows[y * ow + x] = taps.iter().zip(&s[x..x + n]).map(|(t, v)| t * v).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = taps.iter().enumerate().map(|(j, t)| t * rows[(y + j) * ow + x]).sum();
        }
    }
    out
}

fn ssim_plane(a: &[f32], b: &[f32], h: usize, w: usize, taps: &[f64]) -> f64 {
    let c1 = K1 * K1;
    let c2 = K2 * K2;
    let to64 = |p: &[f32]| p.iter().map(|&v| v as f64).collect::<Vec<_>>();
    let (x, y) = (to64(a), to64(b));
    let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.iter().zip(&y).map(|(p, q)| p * q).collect();
    let f = |p: &[f64]| filter_valid(p, h, w, taps);
    let (ux, uy, uxx, uyy, uxy) = (f(&x), f(&y), f(&xx), f(&yy), f(&xy));
    let n = ux.len();
    let mut total = 0.0;
    for i in 0..n {
        let (mx, my) = (ux[i], uy[i]);
        let vx = uxx[i] - mx * mx;
        let vy = uyy[i] - my * my;
        let vxy = uxy[i] - mx * my;
        let num = (2.0 * mx * my + c1) * (2.0 * vxy + c2);
        let den = (mx * mx + my * my + c1) * (vx + vy + c2);
        total += num / den;
    }
    total / n as f64
}

/// Mean structural similarity.
pub fn ssim(a: &ImageTensor, b: &ImageTensor) -> Result<f64> {
    check_pair(a, b)?;
    let (h, w) = a.dims();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::invalid(format!(
            "SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels, got {h}x{w}"
        )));
    }
    let taps = gaussian_window(SSIM_WINDOW, SSIM_SIGMA);
    let sum: f64 = (0..a.channels())
        .map(|c| ssim_plane(a.plane(c), b.plane(c), h, w, &taps))
        .sum();
    Ok(sum / a.channels() as f64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ImageMetrics {
    pub name: String,
    pub psnr_db: f64,
    pub ssim: f64,
}

/// Per-image scores plus their means.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricReport {
    pub images: Vec<ImageMetrics>,
}

impl MetricReport {
    pub fn add(&mut self, name: impl Into<String>, pred: &ImageTensor, truth: &ImageTensor) -> Result<&ImageMetrics> {
        let entry = ImageMetrics {
            name: name.into(),
            psnr_db: psnr(pred, truth)?,
            ssim: ssim(pred, truth)?,
        };
        self.images.push(entry);
        Ok(self.images.last().expect("just pushed"))
    }

    fn mean(&self, f: impl Fn(&ImageMetrics) -> f64) -> f64 {
        if self.images.is_empty() {
            return 0.0;
        }
        self.images.iter().map(f).sum::<f64>() / self.images.len() as f64
    }

    pub fn psnr_db(&self) -> f64 {
        self.mean(|m| m.psnr_db)
    }

    pub fn ssim(&self) -> f64 {
        self.mean(|m| m.ssim)
    }

    /// One `image=… psnr=… ssim=…` line per image.
    pub fn lines(&self) -> String {
        let mut out = String::new();
        for m in &self.images {
            let _ = writeln!(out, "image={} psnr={:.6} ssim={:.6}", m.name, m.psnr_db, m.ssim);
        }
        out
    }

    /// `key=value` summary of the means.
    pub fn summary(&self) -> String {
        format!(
            "count={}\npsnr_db={:.6}\nssim={:.6}\n",
            self.images.len(),
            self.psnr_db(),
            self.ssim()
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(seed: u64, c: usize, h: usize, w: usize) -> ImageTensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ImageTensor::from_fn(c, h, w, |_, _, _| rng.gen::<f32>()).unwrap()
    }

    #[test]
    fn psnr_cap_and_offset() {
        let a = random(1, 3, 16, 16);
        assert_eq!(psnr(&a, &a).unwrap(), PSNR_CAP_DB);
        let lo = ImageTensor::filled(3, 8, 8, 0.25).unwrap();
        let hi = ImageTensor::filled(3, 8, 8, 0.35).unwrap();
        assert!((psnr(&lo, &hi).unwrap() - 20.0).abs() <= 1e-6);
        assert!(psnr(&lo, &ImageTensor::zeros(3, 8, 9).unwrap()).is_err());
    }

    #[test]
    fn psnr_matches_reference_loop() {
        let (a, b) = (random(2, 3, 20, 30), random(3, 3, 20, 30));
        let mut sum = 0.0f64;
        for i in 0..a.data().len() {
            sum += (a.data()[i] as f64 - b.data()[i] as f64).powi(2);
        }
        let want = 10.0 * (1.0 / (sum / a.data().len() as f64)).log10();
        assert!((psnr(&a, &b).unwrap() - want).abs() <= 1e-9);
        assert_eq!(psnr(&a, &b).unwrap(), psnr(&b, &a).unwrap());
    }

    #[test]
    fn psnr_falls_with_noise_amplitude() {
        let base = random(4, 3, 32, 32);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let noise: Vec<f32> = (0..base.data().len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut last = f64::INFINITY;
        for amp in [0.01f32, 0.02, 0.05, 0.1, 0.2] {
            let data = base.data().iter().zip(&noise).map(|(v, n)| v + amp * n).collect();
            let noisy = ImageTensor::new(3, 32, 32, data).unwrap();
            let p = psnr(&base, &noisy).unwrap();
            assert!(p < last);
            last = p;
        }
    }

    #[test]
    fn window_is_normalized_and_symmetric() {
        let g = gaussian_window(11, 1.5);
        assert!((g.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        for i in 0..5 {
            assert_eq!(g[i], g[10 - i]);
        }
    }

    #[test]
    fn ssim_self_is_exactly_one() {
        for seed in 0..5 {
            let a = random(seed, 3, 23, 17);
            assert_eq!(ssim(&a, &a).unwrap(), 1.0);
        }
    }

    #[test]
    fn ssim_constant_images_closed_form() {
        let a = ImageTensor::filled(1, 16, 16, 0.2).unwrap();
        let b = ImageTensor::filled(1, 16, 16, 0.8).unwrap();
        let (c1, c2) = (K1 * K1, K2 * K2);
        let (m1, m2) = (0.2f32 as f64, 0.8f32 as f64);
        let want = (2.0 * m1 * m2 + c1) * c2 / ((m1 * m1 + m2 * m2 + c1) * c2);
        assert!((ssim(&a, &b).unwrap() - want).abs() < 1e-12);
    }

    #[test]
    fn ssim_symmetric_and_bounded() {
        let (a, b) = (random(6, 3, 30, 40), random(7, 3, 30, 40));
        let s = ssim(&a, &b).unwrap();
        assert_eq!(s, ssim(&b, &a).unwrap());
        assert!(s < 1.0 && s > -1.0);
        assert!(ssim(&a, &ImageTensor::zeros(3, 30, 41).unwrap()).is_err());
        assert!(ssim(&random(1, 1, 10, 40), &random(2, 1, 10, 40)).is_err());
    }

    #[test]
    fn report_lines_and_summary() {
        let a = ImageTensor::filled(3, 12, 12, 0.25).unwrap();
        let b = ImageTensor::filled(3, 12, 12, 0.35).unwrap();
        let mut r = MetricReport::default();
        r.add("x", &a, &b).unwrap();
        r.add("y", &a, &a).unwrap();
        assert!(r.lines().starts_with("image=x psnr=20.00000"));
        assert!((r.psnr_db() - 59.5).abs() < 1e-6);
        assert!(r.summary().starts_with("count=2\npsnr_db=59.500000\n"));
    }
}
