//! Linear-ᾱ noise schedule and deterministic (η = 0) DDIM updates.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::mat::Mat;

/// ᾱ at the noisiest step `t = T`.
pub const ALPHA_BAR_NOISY: f64 = 0.999;

#[derive(Debug, Clone, PartialEq)]
pub struct Schedule {
    steps: usize,
    /// `alpha_bar[t]` for `t = 0..=T`; `alpha_bar[0] = 1`.
    alpha_bar: Vec<f64>,
}

/// ᾱ falls linearly from 1 at `t = 0` to [`ALPHA_BAR_NOISY`] at `t = T`.
pub fn build_schedule(steps: usize) -> Result<Schedule> {
    if steps < 2 {
        return Err(Error::arg("schedule needs at least 2 steps"));
    }
    let alpha_bar = (0..=steps)
        .map(|t| 1.0 - (1.0 - ALPHA_BAR_NOISY) * t as f64 / steps as f64)
        .collect();
    Ok(Schedule { steps, alpha_bar })
}

impl Schedule {
    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bar[t]
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bar
    }

    /// `ε̂ = (z_t − √ᾱ_t·x₀) / √(1−ᾱ_t)`, for `t ≥ 1`.
    pub fn eps_from_x0(&self, z_t: &Mat, x0: &Mat, t: usize) -> Mat {
        let a = self.alpha_bar[t];
        let (sa, sn) = (libm::sqrt(a), libm::sqrt(1.0 - a));
        Mat::from_fn(z_t.rows(), z_t.cols(), |r, c| (z_t[(r, c)] - sa * x0[(r, c)]) / sn)
    }

    /// `x₀ = (z_t − √(1−ᾱ_t)·ε̂) / √ᾱ_t`.
    pub fn x0_from_eps(&self, z_t: &Mat, eps: &Mat, t: usize) -> Mat {
        let a = self.alpha_bar[t];
        let (sa, sn) = (libm::sqrt(a), libm::sqrt(1.0 - a));
        Mat::from_fn(z_t.rows(), z_t.cols(), |r, c| (z_t[(r, c)] - sn * eps[(r, c)]) / sa)
    }

    /// Deterministic DDIM step `z_t → z_{t−1}`.
    pub fn ddim_step(&self, x0: &Mat, eps: &Mat, t: usize) -> Mat {
        let a = self.alpha_bar[t - 1];
        let (sa, sn) = (libm::sqrt(a), libm::sqrt(1.0 - a));
        Mat::from_fn(x0.rows(), x0.cols(), |r, c| sa * x0[(r, c)] + sn * eps[(r, c)])
    }
}
