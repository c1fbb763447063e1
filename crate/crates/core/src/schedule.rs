//! Discrete diffusion timestep grid.
//!
//! Step `t` runs from `0` (clean data) to `T` (noisiest). `alpha_bar` is
//! stored at all `T + 1` points so that `alpha_bar(0) == 1` exactly and the
//! final scheduler step collapses onto the clean estimate.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_STEPS: usize = 50;
pub const DEFAULT_BETA_START: f64 = 1e-4;
pub const DEFAULT_BETA_END: f64 = 0.02;

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    /// `betas[s - 1]` is the variance increment of step `s`, for `s = 1..=T`.
    betas: Vec<f64>,
    alpha_bar: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleParams {
    #[serde(default = "default_steps")]
    pub steps: usize,
    #[serde(default = "default_beta_start")]
    pub beta_start: f64,
    #[serde(default = "default_beta_end")]
    pub beta_end: f64,
}

fn default_steps() -> usize {
    DEFAULT_STEPS
}
fn default_beta_start() -> f64 {
    DEFAULT_BETA_START
}
fn default_beta_end() -> f64 {
    DEFAULT_BETA_END
}

impl Default for ScheduleParams {
    fn default() -> Self {
        Self {
            steps: DEFAULT_STEPS,
            beta_start: DEFAULT_BETA_START,
            beta_end: DEFAULT_BETA_END,
        }
    }
}

impl ScheduleParams {
    pub fn build(&self) -> Result<NoiseSchedule> {
        build_linear_schedule(self.steps, self.beta_start, self.beta_end)
    }
}

/// Linear beta schedule over `steps` steps with cumulative products.
pub fn build_linear_schedule(steps: usize, beta_start: f64, beta_end: f64) -> Result<NoiseSchedule> {
    if steps < 2 {
        return Err(Error::InvalidRange {
            what: "steps",
            detail: format!("need at least 2 steps, got {steps}"),
        });
    }
    if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
        return Err(Error::InvalidRange {
            what: "beta",
            detail: format!("need 0 < beta_start <= beta_end < 1, got [{beta_start}, {beta_end}]"),
        });
    }
    let last = (steps - 1) as f64;
    let betas: Vec<f64> = (0..steps)
        .map(|i| beta_start + (beta_end - beta_start) * (i as f64) / last)
        .collect();
    let mut alpha_bar = Vec::with_capacity(steps + 1);
    alpha_bar.push(1.0);
    let mut acc = 1.0;
    for beta in &betas {
        acc *= 1.0 - beta;
        alpha_bar.push(acc);
    }
    Ok(NoiseSchedule { betas, alpha_bar })
}

impl NoiseSchedule {
    /// Number of denoising steps `T`.
    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    /// All `T + 1` cumulative coefficients, index `t`.
    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bar
    }

    pub fn alpha_bar(&self, t: usize) -> Result<f64> {
        self.alpha_bar.get(t).copied().ok_or(Error::StepOutOfRange {
            t,
            lo: 0,
            hi: self.steps(),
        })
    }

    /// `alpha_bar(t)` restricted to the denoising range `1..=T`.
    pub(crate) fn noisy_alpha_bar(&self, t: usize) -> Result<f64> {
        if t == 0 || t > self.steps() {
            return Err(Error::StepOutOfRange {
                t,
                lo: 1,
                hi: self.steps(),
            });
        }
        Ok(self.alpha_bar[t])
    }

    /// `(sqrt(alpha_bar_t), sqrt(1 - alpha_bar_t))`.
    pub fn signal_coeffs(&self, t: usize) -> Result<(f64, f64)> {
        let ab = self.alpha_bar(t)?;
        Ok((ab.sqrt(), (1.0 - ab).sqrt()))
    }
}
