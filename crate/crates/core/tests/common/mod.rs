//! Independent reference implementations shared by the integration tests.

#![allow(dead_code)]

use std::path::PathBuf;

use pyradoc::{DenoiseInput, Denoiser, ImageTensor, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn fixture(path: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(path)
}

pub fn random_image(rng: &mut ChaCha8Rng, c: usize, h: usize, w: usize, lo: f32, hi: f32) -> ImageTensor {
    ImageTensor::from_fn(c, h, w, |_, _, _| rng.gen_range(lo..hi)).unwrap()
}

pub fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Smallest padded length `≥ max(n, patch)` on the stride lattice, by search.
pub fn padded_by_search(n: usize, patch: usize, stride: usize) -> usize {
    let mut len = n.max(patch);
    while (len - patch) % stride != 0 {
        len += 1;
    }
    len
}

/// Mirror index without repeating the edge sample, by repeated folding.
pub fn mirror(mut i: i64, n: usize) -> usize {
    let n = n as i64;
    if n == 1 {
        return 0;
    }
    loop {
        if i < 0 {
            i = -i;
        } else if i >= n {
            i = 2 * (n - 1) - i;
        } else {
            return i as usize;
        }
    }
}

/// Window of `img` at `(y0, x0)` on the mirror-padded canvas.
pub fn window(img: &ImageTensor, y0: usize, x0: usize, ph: usize, pw: usize) -> ImageTensor {
    let (h, w) = img.dims();
    ImageTensor::from_fn(img.channels(), ph, pw, |c, y, x| {
        img.get(c, mirror((y0 + y) as i64, h), mirror((x0 + x) as i64, w))
    })
    .unwrap()
}

/// `ᾱ` for a linear schedule, index 0 being the clean boundary.
pub fn alpha_bars(steps: usize, beta_start: f64, beta_end: f64) -> Vec<f64> {
    let mut out = vec![1.0];
    let mut prod = 1.0;
    for i in 0..steps {
        let beta = if steps == 1 {
            beta_start
        } else {
            beta_start + (beta_end - beta_start) * i as f64 / (steps - 1) as f64
        };
        prod *= 1.0 - beta;
        out.push(prod);
    }
    out
}

/// One reverse step at one patch scale, written as a single loop over the
/// grid with `f64` accumulation.
#[allow(clippy::too_many_arguments)]
pub fn naive_scale_step(
    z_t: &ImageTensor,
    x: &ImageTensor,
    c: &ImageTensor,
    patch: (usize, usize),
    stride: (usize, usize),
    t: usize,
    ab: &[f64],
    den: &dyn Denoiser,
) -> Vec<f64> {
    let (h, w) = z_t.dims();
    let hp = padded_by_search(h, patch.0, stride.0);
    let wp = padded_by_search(w, patch.1, stride.1);
    let mut sum = vec![0f64; 3 * hp * wp];
    let mut count = vec![0f64; hp * wp];
    let (a_t, a_prev) = (ab[t], ab[t - 1]);
    let mut y0 = 0;
    while y0 + patch.0 <= hp {
        let mut x0 = 0;
        while x0 + patch.1 <= wp {
            let zp = window(z_t, y0, x0, patch.0, patch.1);
            let xp = window(x, y0, x0, patch.0, patch.1);
            let cp = window(c, y0, x0, patch.0, patch.1);
            let z0 = den
                .denoise(&DenoiseInput {
                    z_t: &zp,
                    t,
                    x: &xp,
                    c: &cp,
                    origin: (y0, x0),
                })
                .unwrap();
            for ch in 0..3 {
                for y in 0..patch.0 {
                    for xx in 0..patch.1 {
                        let zh = z0.get(ch, y, xx) as f64;
                        let zt = zp.get(ch, y, xx) as f64;
                        let eps = (zt - a_t.sqrt() * zh) / (1.0 - a_t).sqrt();
                        let prev = a_prev.sqrt() * zh + (1.0 - a_prev).sqrt() * eps;
                        sum[(ch * hp + y0 + y) * wp + x0 + xx] += prev;
                        if ch == 0 {
                            count[(y0 + y) * wp + x0 + xx] += 1.0;
                        }
                    }
                }
            }
            x0 += stride.1;
        }
        y0 += stride.0;
    }
    let mut out = Vec::with_capacity(3 * h * w);
    for ch in 0..3 {
        for y in 0..h {
            for xx in 0..w {
                out.push(sum[(ch * hp + y) * wp + xx] / count[y * wp + xx]);
            }
        }
    }
    out
}

/// Denoiser whose prediction depends on the patch origin, so overlapping
/// patches disagree and the merge has real work to do.
pub struct PositionalDenoiser;

impl Denoiser for PositionalDenoiser {
    fn denoise(&self, i: &DenoiseInput<'_>) -> Result<ImageTensor> {
        let (h, w) = i.x.dims();
        let phase = 0.37 * i.origin.0 as f32 + 0.11 * i.origin.1 as f32 + 0.05 * i.t as f32;
        ImageTensor::from_fn(3, h, w, |ch, y, x| {
            0.6 * i.x.get(ch, y, x) + 0.25 * i.z_t.get(ch, y, x).tanh() + 0.1 * i.c.get(0, y, x)
                + 0.05 * (phase + 0.2 * (y + 2 * x) as f32 + ch as f32).sin()
        })
    }
}

pub fn max_abs_diff(a: &[f32], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(&p, &q)| (p as f64 - q).abs()).fold(0.0, f64::max)
}
