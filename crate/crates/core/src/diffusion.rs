//! Variance schedules, forward noising and the deterministic reverse step.
//!
//! The model predicts the clean image `ẑ0` directly. A reverse step recovers
//! the implied noise from `(z_t, ẑ0)` and re-noises `ẑ0` to level `t - 1`
//! with zero added variance:
//!
//! ```text
//! z_{t-1} = √ᾱ_{t-1}·ẑ0 + √(1-ᾱ_{t-1}) · (z_t - √ᾱ_t·ẑ0) / √(1-ᾱ_t)
//! ```
//!
//! Step indices run `1..=T`; `ᾱ_0` is defined as exactly `1`, so the final step
//! returns `ẑ0` unchanged.

use crate::error::{Error, Result};
use crate::image::ImageTensor;

/// Endpoints of the linear training schedule.
pub const DEFAULT_BETA_START: f64 = 1e-4;
pub const DEFAULT_BETA_END: f64 = 0.02;
/// Step count of the training schedule.
pub const DEFAULT_TRAIN_STEPS: usize = 2000;

const DENOM_FLOOR: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    alphas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

impl NoiseSchedule {
    /// Schedule from explicit per-step variances.
    pub fn from_betas(betas: Vec<f64>) -> Result<Self> {
        if betas.is_empty() {
            return Err(Error::invalid("schedule needs at least one step"));
        }
        if let Some(b) = betas.iter().find(|b| !(**b > 0.0 && **b < 1.0)) {
            return Err(Error::invalid(format!("beta {b} outside (0, 1)")));
        }
        let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
        let alpha_bars = alphas
            .iter()
            .scan(1.0f64, |acc, a| {
                *acc *= a;
                Some(*acc)
            })
            .collect();
        Ok(Self {
            betas,
            alphas,
            alpha_bars,
        })
    }

    /// `steps` variances spaced linearly from `beta_start` to `beta_end`,
    /// both inclusive.
    pub fn linear(steps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if steps == 0 {
            return Err(Error::invalid("schedule needs at least one step"));
        }
        if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
            return Err(Error::invalid(format!(
                "need 0 < beta_start <= beta_end < 1, got {beta_start}..{beta_end}"
            )));
        }
        let betas = if steps == 1 {
            vec![beta_start]
        } else {
            let span = beta_end - beta_start;
            (0..steps)
                .map(|i| beta_start + span * i as f64 / (steps - 1) as f64)
                .collect()
        };
        Self::from_betas(betas)
    }

    /// The training schedule: 2000 steps from 1e-4 to 0.02.
    pub fn training_default() -> Self {
        Self::linear(DEFAULT_TRAIN_STEPS, DEFAULT_BETA_START, DEFAULT_BETA_END)
            .expect("default schedule is valid")
    }

    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    /// `ᾱ_1 … ᾱ_T`.
    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bars
    }

    /// `ᾱ_t` for `t` in `0..=T`, with `ᾱ_0 = 1`.
    pub fn alpha_bar(&self, t: usize) -> Result<f64> {
        match t {
            0 => Ok(1.0),
            t if t <= self.steps() => Ok(self.alpha_bars[t - 1]),
            t => Err(Error::invalid(format!("step {t} outside 0..={}", self.steps()))),
        }
    }

    fn check_step(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.steps() {
            return Err(Error::invalid(format!("step {t} outside 1..={}", self.steps())));
        }
        Ok(())
    }
}

fn check_same(a: &ImageTensor, b: &ImageTensor, what: &str) -> Result<()> {
    if !a.same_shape(b) {
        return Err(Error::invalid(format!(
            "{what}: {}x{}x{} vs {}x{}x{}",
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

/// Closed-form forward marginal `√ᾱ_t·z0 + √(1-ᾱ_t)·ε`. Not clamped.
pub fn q_sample(z0: &ImageTensor, t: usize, eps: &ImageTensor, sched: &NoiseSchedule) -> Result<ImageTensor> {
    sched.check_step(t)?;
    check_same(z0, eps, "q_sample shape mismatch")?;
    let ab = sched.alpha_bar(t)?;
    let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
    let data = z0
        .data()
        .iter()
        .zip(eps.data())
        .map(|(&z, &e)| (a * z as f64 + b * e as f64) as f32)
        .collect();
    ImageTensor::new(z0.channels(), z0.height(), z0.width(), data)
}

/// Coefficients `(on ẑ0, on z_t)` of the reverse update between two noise
/// levels.
pub fn reverse_coefficients(alpha_bar_t: f64, alpha_bar_prev: f64) -> (f64, f64) {
    let denom = (1.0 - alpha_bar_t).sqrt().max(DENOM_FLOOR);
    let noise_scale = (1.0 - alpha_bar_prev).sqrt() / denom;
    (alpha_bar_prev.sqrt() - noise_scale * alpha_bar_t.sqrt(), noise_scale)
}

/// Reverse update between arbitrary noise levels, in place on `z0_hat`'s
/// buffer shape. `alpha_bar_prev == 1` returns `ẑ0` bit-for-bit.
pub fn ddim_update(
    z_t: &ImageTensor,
    z0_hat: &ImageTensor,
    alpha_bar_t: f64,
    alpha_bar_prev: f64,
) -> Result<ImageTensor> {
    let mut out = z0_hat.clone();
    ddim_update_in_place(z_t, &mut out, alpha_bar_t, alpha_bar_prev)?;
    Ok(out)
}

/// Overwrites `z0_hat` with `z_{t-1}`.
pub(crate) fn ddim_update_in_place(
    z_t: &ImageTensor,
    z0_hat: &mut ImageTensor,
    alpha_bar_t: f64,
    alpha_bar_prev: f64,
) -> Result<()> {
    check_same(z_t, z0_hat, "ddim_step shape mismatch")?;
    if alpha_bar_prev == 1.0 {
        return Ok(());
    }
    let (cx, cz) = reverse_coefficients(alpha_bar_t, alpha_bar_prev);
    let (cx, cz) = (cx as f32, cz as f32);
    for (x0, &z) in z0_hat.data_mut().iter_mut().zip(z_t.data()) {
        *x0 = cx * *x0 + cz * z;
    }
    if z0_hat.data().iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("reverse step produced a non-finite value".into()));
    }
    Ok(())
}

/// One deterministic reverse step from `t` to `t - 1`.
pub fn ddim_step(z_t: &ImageTensor, z0_hat: &ImageTensor, t: usize, sched: &NoiseSchedule) -> Result<ImageTensor> {
    sched.check_step(t)?;
    ddim_update(z_t, z0_hat, sched.alpha_bar(t)?, sched.alpha_bar(t - 1)?)
}
