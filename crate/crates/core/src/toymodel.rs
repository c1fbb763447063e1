//! Analytic linear-Gaussian "video" world.
//!
//! A latent video holds `F` frames of `M` object slots, each slot carrying
//! `(x, y, presence)`. A condition embedding maps to a clean trajectory by a
//! fixed linear map (straight-line motion, constant presence), and clean
//! data given a condition is `N(mean_latent(c), sigma_data^2 I)`. The
//! unconditional distribution is an equal-variance mixture over condition
//! prototypes, so both noise predictors have closed forms.

use serde::{Deserialize, Serialize};

use crate::embedding::{ConditionEmbedding, IndexGroups};
use crate::error::{Error, Result};
use crate::rng::{self, Domain};
use crate::schedule::NoiseSchedule;

pub const CHANNELS: usize = 3;
pub const X: usize = 0;
pub const Y: usize = 1;
pub const PRESENCE: usize = 2;

/// Frame-major latent: index `(f * slots + m) * 3 + channel`.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentVideo {
    frames: usize,
    slots: usize,
    data: Vec<f64>,
}

impl LatentVideo {
    pub fn zeros(frames: usize, slots: usize) -> Self {
        Self {
            frames,
            slots,
            data: vec![0.0; frames * slots * CHANNELS],
        }
    }

    pub fn from_vec(frames: usize, slots: usize, data: Vec<f64>) -> Result<Self> {
        let expected = frames * slots * CHANNELS;
        if data.len() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                got: data.len(),
            });
        }
        Ok(Self { frames, slots, data })
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn slots(&self) -> usize {
        self.slots
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn index(&self, frame: usize, slot: usize, channel: usize) -> usize {
        (frame * self.slots + slot) * CHANNELS + channel
    }

    #[inline]
    pub fn get(&self, frame: usize, slot: usize, channel: usize) -> f64 {
        self.data[self.index(frame, slot, channel)]
    }

    #[inline]
    pub fn set(&mut self, frame: usize, slot: usize, channel: usize, value: f64) {
        let i = self.index(frame, slot, channel);
        self.data[i] = value;
    }

    /// All channels of one frame.
    pub fn frame(&self, frame: usize) -> &[f64] {
        let w = self.slots * CHANNELS;
        &self.data[frame * w..(frame + 1) * w]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrototypeParams {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_static_count")]
    pub static_count: usize,
    #[serde(default = "default_dynamic_count")]
    pub dynamic_count: usize,
    #[serde(default = "default_static_velocity_std")]
    pub static_velocity_std: f64,
    #[serde(default = "default_dynamic_velocity_std")]
    pub dynamic_velocity_std: f64,
}

fn default_static_count() -> usize {
    8
}
fn default_dynamic_count() -> usize {
    2
}
fn default_static_velocity_std() -> f64 {
    0.05
}
fn default_dynamic_velocity_std() -> f64 {
    1.0
}

impl Default for PrototypeParams {
    fn default() -> Self {
        Self {
            seed: 0,
            static_count: default_static_count(),
            dynamic_count: default_dynamic_count(),
            static_velocity_std: default_static_velocity_std(),
            dynamic_velocity_std: default_dynamic_velocity_std(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorldParams {
    #[serde(default = "default_slots")]
    pub slots: usize,
    #[serde(default = "default_frames")]
    pub frames: usize,
    #[serde(default = "default_sigma_data")]
    pub sigma_data: f64,
    #[serde(default)]
    pub prototypes: PrototypeParams,
}

fn default_slots() -> usize {
    3
}
fn default_frames() -> usize {
    8
}
fn default_sigma_data() -> f64 {
    0.05
}

impl Default for WorldParams {
    fn default() -> Self {
        Self {
            slots: default_slots(),
            frames: default_frames(),
            sigma_data: default_sigma_data(),
            prototypes: PrototypeParams::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct WorldModel {
    frames: usize,
    slots: usize,
    sigma_data: f64,
    prototypes: Vec<Vec<f64>>,
    log_weights: Vec<f64>,
    prototype_latents: Vec<Vec<f64>>,
}

impl WorldModel {
    /// Static-biased prior: `static_count` prototypes whose velocities are
    /// near zero and `dynamic_count` with unit-scale velocities, equally
    /// weighted. Positions are standard normal and each slot is present
    /// with probability one half.
    pub fn new(params: &WorldParams) -> Result<Self> {
        let m = params.slots;
        let p = &params.prototypes;
        let k = p.static_count + p.dynamic_count;
        if k == 0 {
            return Err(Error::InvalidRange {
                what: "prototypes",
                detail: "need at least one prototype".into(),
            });
        }
        let dim = 5 * m;
        let prototypes = (0..k)
            .map(|j| {
                let g = rng::normal_vec(p.seed, Domain::Prototypes, j as u64, dim);
                let vel_std = if j < p.static_count {
                    p.static_velocity_std
                } else {
                    p.dynamic_velocity_std
                };
                let mut c = g.clone();
                for v in &mut c[2 * m..4 * m] {
                    *v *= vel_std;
                }
                for v in &mut c[4 * m..5 * m] {
                    *v = if *v > 0.0 { 1.0 } else { 0.0 };
                }
                c
            })
            .collect();
        let weights = vec![1.0 / k as f64; k];
        Self::with_prototypes(params.frames, m, params.sigma_data, prototypes, weights)
    }

    pub fn with_prototypes(
        frames: usize,
        slots: usize,
        sigma_data: f64,
        prototypes: Vec<Vec<f64>>,
        weights: Vec<f64>,
    ) -> Result<Self> {
        if frames == 0 || slots == 0 {
            return Err(Error::InvalidRange {
                what: "world shape",
                detail: format!("frames={frames}, slots={slots}"),
            });
        }
        if !(sigma_data >= 0.0 && sigma_data.is_finite()) {
            return Err(Error::InvalidRange {
                what: "sigma_data",
                detail: format!("must be finite and >= 0, got {sigma_data}"),
            });
        }
        if prototypes.is_empty() || prototypes.len() != weights.len() {
            return Err(Error::LengthMismatch {
                left: prototypes.len(),
                right: weights.len(),
            });
        }
        let total: f64 = weights.iter().sum();
        if weights.iter().any(|w| w.is_nan() || *w <= 0.0) || (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidRange {
                what: "prototype weights",
                detail: "weights must be positive and sum to 1".into(),
            });
        }
        let mut world = Self {
            frames,
            slots,
            sigma_data,
            prototypes: Vec::new(),
            log_weights: weights.iter().map(|w| w.ln()).collect(),
            prototype_latents: Vec::new(),
        };
        for p in &prototypes {
            world.check_dim(p.len())?;
        }
        world.prototype_latents = prototypes.iter().map(|p| world.linear_map(p)).collect();
        world.prototypes = prototypes;
        Ok(world)
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn slots(&self) -> usize {
        self.slots
    }

    pub fn sigma_data(&self) -> f64 {
        self.sigma_data
    }

    pub fn embedding_dim(&self) -> usize {
        5 * self.slots
    }

    pub fn latent_dim(&self) -> usize {
        CHANNELS * self.slots * self.frames
    }

    pub fn prototypes(&self) -> &[Vec<f64>] {
        &self.prototypes
    }

    pub fn prototype_weights(&self) -> Vec<f64> {
        self.log_weights.iter().map(|l| l.exp()).collect()
    }

    pub fn default_groups(&self) -> IndexGroups {
        IndexGroups::slot_layout(self.slots)
    }

    fn check_dim(&self, got: usize) -> Result<()> {
        if got != self.embedding_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.embedding_dim(),
                got,
            });
        }
        Ok(())
    }

    fn check_latent(&self, z: &LatentVideo) -> Result<()> {
        if z.frames != self.frames || z.slots != self.slots {
            return Err(Error::DimensionMismatch {
                expected: self.latent_dim(),
                got: z.data.len(),
            });
        }
        Ok(())
    }

    fn linear_map(&self, c: &[f64]) -> Vec<f64> {
        let m = self.slots;
        let mut out = vec![0.0; self.latent_dim()];
        for f in 0..self.frames {
            let ff = f as f64;
            for s in 0..m {
                let base = (f * m + s) * CHANNELS;
                out[base + X] = c[2 * s] + ff * c[2 * m + 2 * s];
                out[base + Y] = c[2 * s + 1] + ff * c[2 * m + 2 * s + 1];
                out[base + PRESENCE] = c[4 * m + s];
            }
        }
        out
    }

    /// Noiseless trajectory for a condition.
    pub fn mean_latent(&self, c: &ConditionEmbedding) -> Result<LatentVideo> {
        self.check_dim(c.len())?;
        Ok(LatentVideo {
            frames: self.frames,
            slots: self.slots,
            data: self.linear_map(c.values()),
        })
    }

    /// Draw from `p(z_0 | c)`.
    pub fn sample_clean(&self, c: &ConditionEmbedding, seed: u64) -> Result<LatentVideo> {
        let mut z = self.mean_latent(c)?;
        if self.sigma_data > 0.0 {
            let g = rng::normal_vec(seed, Domain::CleanSample, 0, z.data.len());
            for (v, n) in z.data.iter_mut().zip(g) {
                *v += self.sigma_data * n;
            }
        }
        Ok(z)
    }

    /// Marginal variance of `z_t` around `sqrt(alpha_bar) * mean`.
    fn marginal_var(&self, alpha_bar: f64) -> f64 {
        alpha_bar * self.sigma_data * self.sigma_data + (1.0 - alpha_bar)
    }

    /// Conditional noise prediction for a precomputed mean trajectory.
    pub(crate) fn eps_from_mean(&self, alpha_bar: f64, z: &[f64], mean: &[f64]) -> Vec<f64> {
        let sa = alpha_bar.sqrt();
        let scale = (1.0 - alpha_bar).sqrt() / self.marginal_var(alpha_bar);
        z.iter().zip(mean).map(|(zi, mi)| scale * (zi - sa * mi)).collect()
    }

    /// `eps(z_t, c) = -sqrt(1 - abar) * grad log N(z_t; sqrt(abar) mu_c, v_t I)`.
    pub fn eps_conditional(
        &self,
        sched: &NoiseSchedule,
        z: &LatentVideo,
        t: usize,
        c: &ConditionEmbedding,
    ) -> Result<LatentVideo> {
        let ab = sched.noisy_alpha_bar(t)?;
        self.check_latent(z)?;
        let mean = self.mean_latent(c)?;
        Ok(LatentVideo {
            frames: self.frames,
            slots: self.slots,
            data: self.eps_from_mean(ab, &z.data, &mean.data),
        })
    }

    /// Posterior responsibilities of each prototype given `z_t`.
    pub fn posterior_weights(&self, sched: &NoiseSchedule, z: &LatentVideo, t: usize) -> Result<Vec<f64>> {
        let ab = sched.noisy_alpha_bar(t)?;
        self.check_latent(z)?;
        Ok(self.responsibilities(ab, &z.data))
    }

    fn responsibilities(&self, alpha_bar: f64, z: &[f64]) -> Vec<f64> {
        let sa = alpha_bar.sqrt();
        let v = self.marginal_var(alpha_bar);
        let logits: Vec<f64> = self
            .prototype_latents
            .iter()
            .zip(&self.log_weights)
            .map(|(mu, lw)| {
                let sq: f64 = z.iter().zip(mu).map(|(zi, mi)| (zi - sa * mi).powi(2)).sum();
                lw - sq / (2.0 * v)
            })
            .collect();
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut w: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
        let total: f64 = w.iter().sum();
        for x in &mut w {
            *x /= total;
        }
        w
    }

    pub(crate) fn eps_unconditional_raw(&self, alpha_bar: f64, z: &[f64]) -> Vec<f64> {
        let w = self.responsibilities(alpha_bar, z);
        let mut out = vec![0.0; z.len()];
        for (wk, mu) in w.iter().zip(&self.prototype_latents) {
            if *wk == 0.0 {
                continue;
            }
            let eps_k = self.eps_from_mean(alpha_bar, z, mu);
            for (o, e) in out.iter_mut().zip(eps_k) {
                *o += wk * e;
            }
        }
        out
    }

    /// Exact mixture noise prediction: the responsibility-weighted average
    /// of the per-prototype conditional predictions.
    pub fn eps_unconditional(&self, sched: &NoiseSchedule, z: &LatentVideo, t: usize) -> Result<LatentVideo> {
        let ab = sched.noisy_alpha_bar(t)?;
        self.check_latent(z)?;
        Ok(LatentVideo {
            frames: self.frames,
            slots: self.slots,
            data: self.eps_unconditional_raw(ab, &z.data),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schedule::build_linear_schedule;

    fn embedding(values: Vec<f64>) -> ConditionEmbedding {
        let m = values.len() / 5;
        ConditionEmbedding::new(values, IndexGroups::slot_layout(m)).unwrap()
    }

    fn single(frames: usize, slots: usize, sigma: f64, proto: Vec<f64>) -> WorldModel {
        WorldModel::with_prototypes(frames, slots, sigma, vec![proto], vec![1.0]).unwrap()
    }

    #[test]
    fn mean_latent_straight_line() {
        let w = single(4, 3, 0.0, vec![0.0; 15]);
        let mut v = vec![0.0; 15];
        v[6] = 1.0; // slot 0 vx
        v[12] = 1.0; // slot 0 presence
        let z = w.mean_latent(&embedding(v)).unwrap();
        let xs: Vec<f64> = (0..4).map(|f| z.get(f, 0, X)).collect();
        assert_eq!(xs, vec![0.0, 1.0, 2.0, 3.0]);
        for f in 0..4 {
            for s in 0..3 {
                assert_eq!(z.get(f, s, Y), 0.0);
            }
            assert_eq!(z.get(f, 0, PRESENCE), 1.0);
            assert_eq!(z.get(f, 1, PRESENCE), 0.0);
        }
    }

    #[test]
    fn zero_embedding_zero_latent() {
        let w = single(8, 3, 0.05, vec![0.0; 15]);
        let z = w.mean_latent(&embedding(vec![0.0; 15])).unwrap();
        assert!(z.as_slice().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn mean_latent_rejects_wrong_dim() {
        let w = single(8, 3, 0.05, vec![0.0; 15]);
        assert!(w.mean_latent(&embedding(vec![0.0; 10])).is_err());
    }

    #[test]
    fn sample_clean_zero_sigma_and_determinism() {
        let c = embedding((0..15).map(|i| i as f64 * 0.1).collect());
        let w0 = single(8, 3, 0.0, vec![0.0; 15]);
        assert_eq!(w0.sample_clean(&c, 5).unwrap(), w0.mean_latent(&c).unwrap());
        let w = single(8, 3, 0.05, vec![0.0; 15]);
        assert_eq!(w.sample_clean(&c, 5).unwrap(), w.sample_clean(&c, 5).unwrap());
        assert_ne!(w.sample_clean(&c, 5).unwrap(), w.sample_clean(&c, 6).unwrap());
    }

    #[test]
    fn sample_clean_spread() {
        let c = embedding(vec![0.0; 15]);
        let w = single(8, 3, 0.05, vec![0.0; 15]);
        let n = 10_000;
        let coord = 17;
        let xs: Vec<f64> = (0..n)
            .map(|s| w.sample_clean(&c, s).unwrap().as_slice()[coord])
            .collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let sd = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
        assert!((sd - 0.05).abs() <= 0.03 * 0.05, "sd={sd}");
    }

    #[test]
    fn eps_conditional_inverts_forward_process() {
        let sched = build_linear_schedule(50, 1e-4, 0.02).unwrap();
        let c = embedding((0..15).map(|i| (i as f64 * 0.7).sin()).collect());
        let w = single(8, 3, 0.0, vec![0.0; 15]);
        let mu = w.mean_latent(&c).unwrap();
        let t = 30;
        let (sa, so) = sched.signal_coeffs(t).unwrap();
        let u: Vec<f64> = (0..mu.as_slice().len()).map(|i| (i as f64 * 1.3).cos()).collect();
        let zt: Vec<f64> = mu.as_slice().iter().zip(&u).map(|(m, n)| sa * m + so * n).collect();
        let zt = LatentVideo::from_vec(8, 3, zt).unwrap();
        let eps = w.eps_conditional(&sched, &zt, t, &c).unwrap();
        for (e, n) in eps.as_slice().iter().zip(&u) {
            assert!((e - n).abs() < 1e-12);
        }
        let on_mean: Vec<f64> = mu.as_slice().iter().map(|m| sa * m).collect();
        let eps0 = w
            .eps_conditional(&sched, &LatentVideo::from_vec(8, 3, on_mean).unwrap(), t, &c)
            .unwrap();
        assert!(eps0.as_slice().iter().all(|e| e.abs() < 1e-15));
    }

    #[test]
    fn step_range_enforced() {
        let sched = build_linear_schedule(10, 1e-4, 0.02).unwrap();
        let w = single(8, 3, 0.05, vec![0.0; 15]);
        let z = LatentVideo::zeros(8, 3);
        let c = embedding(vec![0.0; 15]);
        assert!(w.eps_conditional(&sched, &z, 0, &c).is_err());
        assert!(w.eps_conditional(&sched, &z, 11, &c).is_err());
        assert!(w.eps_unconditional(&sched, &z, 0).is_err());
    }

    #[test]
    fn single_component_mixture_is_conditional() {
        let sched = build_linear_schedule(50, 1e-4, 0.02).unwrap();
        let proto: Vec<f64> = (0..15).map(|i| (i as f64).cos()).collect();
        let w = single(8, 3, 0.05, proto.clone());
        let z = LatentVideo::from_vec(8, 3, (0..72).map(|i| (i as f64 * 0.31).sin()).collect()).unwrap();
        let a = w.eps_unconditional(&sched, &z, 20).unwrap();
        let b = w.eps_conditional(&sched, &z, 20, &embedding(proto)).unwrap();
        for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn responsibilities_survive_large_inputs() {
        let w = WorldModel::new(&WorldParams::default()).unwrap();
        let sched = build_linear_schedule(50, 1e-4, 0.02).unwrap();
        let z = LatentVideo::from_vec(8, 3, vec![1e3; 72]).unwrap();
        let r = w.posterior_weights(&sched, &z, 1).unwrap();
        assert!((r.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(w.eps_unconditional(&sched, &z, 1).unwrap().is_finite());
    }

    #[test]
    fn default_prior_is_static_biased() {
        let w = WorldModel::new(&WorldParams::default()).unwrap();
        assert_eq!(w.prototypes().len(), 10);
        let speed = |p: &Vec<f64>| p[6..12].iter().map(|v| v.abs()).fold(0.0, f64::max);
        assert!(w.prototypes()[..8].iter().all(|p| speed(p) < 0.3));
        assert!(w.prototypes()[8..].iter().any(|p| speed(p) > 0.3));
        let weights = w.prototype_weights();
        assert!(weights.iter().all(|x| (x - 0.1).abs() < 1e-12));
    }
}
