//! Guided noise combination rules.
//!
//! Besides the combination rules used by the sampler, this module exposes
//! each step of the clean-space view of motion guidance as its own
//! function: Tweedie estimates, the repulsion loss between the clean and
//! perturbed estimates, its gradient, the extrapolated clean estimate, and
//! the inverse-Tweedie map back to a noise prediction. Composing them with
//! step size `gamma` reproduces [`motioncfg_anchored`] with
//! `omega = 2 * gamma * abar / (1 - abar)`.

use serde::{Deserialize, Serialize};

use crate::embedding::{ConditionEmbedding, Group};
use crate::error::{Error, Result};
use crate::rng::{self, Domain};
use crate::schedule::NoiseSchedule;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum GuidanceKind {
    #[serde(rename = "StandardCFG")]
    StandardCfg,
    #[serde(rename = "NegPromptCFG")]
    NegPromptCfg,
    #[serde(rename = "CADS")]
    Cads,
    #[serde(rename = "IntervalGuidance")]
    IntervalGuidance,
    #[serde(rename = "MotionCFG")]
    MotionCfg,
}

impl GuidanceKind {
    pub fn name(self) -> &'static str {
        match self {
            GuidanceKind::StandardCfg => "StandardCFG",
            GuidanceKind::NegPromptCfg => "NegPromptCFG",
            GuidanceKind::Cads => "CADS",
            GuidanceKind::IntervalGuidance => "IntervalGuidance",
            GuidanceKind::MotionCfg => "MotionCFG",
        }
    }
}

/// Which combination rule the motion phase uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MotionRule {
    /// `eps_c + omega * (eps_c - eps_pert)`.
    #[default]
    Anchored,
    /// `eps_pert + omega * (eps_c - eps_pert)`.
    Perturbed,
}

/// Negative branch of the CFG rule: the unconditional mixture, or an
/// explicit negative condition.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum Anchor {
    #[default]
    Null,
    Negative(ConditionEmbedding),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CadsParams {
    #[serde(default = "default_cads_tau1")]
    pub tau1: f64,
    #[serde(default = "default_cads_tau2")]
    pub tau2: f64,
    #[serde(default = "default_cads_noise")]
    pub noise_scale: f64,
    #[serde(default = "default_true")]
    pub rescale: bool,
}

fn default_cads_tau1() -> f64 {
    0.6
}
fn default_cads_tau2() -> f64 {
    0.9
}
fn default_cads_noise() -> f64 {
    0.1
}
fn default_true() -> bool {
    true
}

impl Default for CadsParams {
    fn default() -> Self {
        Self {
            tau1: default_cads_tau1(),
            tau2: default_cads_tau2(),
            noise_scale: default_cads_noise(),
            rescale: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GuidancePolicy {
    pub kind: GuidanceKind,
    pub omega_std: f64,
    pub omega: f64,
    pub tau: f64,
    pub sigma_c: f64,
    pub delay_steps: usize,
    /// Inclusive step range `[t_lo, t_hi]` for interval guidance.
    pub interval: Option<(usize, usize)>,
    pub cads: Option<CadsParams>,
    pub anchor: Anchor,
    pub targets: Vec<Group>,
    pub rule: MotionRule,
}

impl GuidancePolicy {
    fn base(kind: GuidanceKind, omega_std: f64) -> Self {
        Self {
            kind,
            omega_std,
            omega: 0.0,
            tau: 0.0,
            sigma_c: 0.0,
            delay_steps: 0,
            interval: None,
            cads: None,
            anchor: Anchor::Null,
            targets: vec![Group::Motion],
            rule: MotionRule::Anchored,
        }
    }

    pub fn standard_cfg(omega_std: f64) -> Self {
        Self::base(GuidanceKind::StandardCfg, omega_std)
    }

    pub fn neg_prompt(omega_std: f64, negative: ConditionEmbedding) -> Self {
        Self {
            anchor: Anchor::Negative(negative),
            ..Self::base(GuidanceKind::NegPromptCfg, omega_std)
        }
    }

    pub fn cads(omega_std: f64, params: CadsParams) -> Self {
        Self {
            cads: Some(params),
            ..Self::base(GuidanceKind::Cads, omega_std)
        }
    }

    pub fn interval(omega_std: f64, t_lo: usize, t_hi: usize) -> Self {
        Self {
            interval: Some((t_lo, t_hi)),
            ..Self::base(GuidanceKind::IntervalGuidance, omega_std)
        }
    }

    /// Motion-perturbed guidance over the first `tau` fraction of steps,
    /// standard CFG against the null anchor afterwards.
    pub fn motion_cfg(omega: f64, omega_std: f64, tau: f64, sigma_c: f64) -> Self {
        Self {
            omega,
            tau,
            sigma_c,
            ..Self::base(GuidanceKind::MotionCfg, omega_std)
        }
    }

    pub fn with_anchor(mut self, anchor: Anchor) -> Self {
        self.anchor = anchor;
        self
    }

    pub fn with_delay(mut self, delay_steps: usize) -> Self {
        self.delay_steps = delay_steps;
        self
    }

    pub fn with_targets(mut self, targets: Vec<Group>) -> Self {
        self.targets = targets;
        self
    }

    pub fn with_rule(mut self, rule: MotionRule) -> Self {
        self.rule = rule;
        self
    }

    /// Checks field ranges against a schedule with `steps` steps.
    pub fn validate(&self, steps: usize) -> Result<()> {
        let bad = |what: &'static str, detail: String| Err(Error::InvalidRange { what, detail });
        if !(self.omega_std >= 1.0 && self.omega_std.is_finite()) {
            return bad("omega_std", format!("must be >= 1, got {}", self.omega_std));
        }
        if !(self.omega >= 0.0 && self.omega.is_finite()) {
            return bad("omega", format!("must be >= 0, got {}", self.omega));
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return bad("tau", format!("must lie in [0, 1], got {}", self.tau));
        }
        if !(self.sigma_c >= 0.0 && self.sigma_c.is_finite()) {
            return bad("sigma_c", format!("must be >= 0, got {}", self.sigma_c));
        }
        if let Some((lo, hi)) = self.interval {
            if lo < 1 || hi > steps || lo > hi {
                return bad("interval", format!("[{lo}, {hi}] not within [1, {steps}]"));
            }
        }
        if let Some(c) = &self.cads {
            check_cads(c.tau1, c.tau2)?;
            if c.noise_scale.is_nan() || c.noise_scale < 0.0 {
                return bad("cads.noise_scale", format!("must be >= 0, got {}", c.noise_scale));
            }
        }
        if self.kind == GuidanceKind::IntervalGuidance && self.interval.is_none() {
            return bad("interval", "interval guidance needs an interval".into());
        }
        if self.kind == GuidanceKind::NegPromptCfg && self.anchor == Anchor::Null {
            return bad("anchor", "negative prompting needs a negative embedding".into());
        }
        Ok(())
    }
}

fn same_len(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::ShapeMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    Ok(())
}

/// Classifier-free guidance: `eps_null + omega_std * (eps_cond - eps_null)`.
pub fn cfg_combine(eps_null: &[f64], eps_cond: &[f64], omega_std: f64) -> Result<Vec<f64>> {
    same_len(eps_null, eps_cond)?;
    if omega_std == 1.0 {
        return Ok(eps_cond.to_vec());
    }
    Ok(eps_null
        .iter()
        .zip(eps_cond)
        .map(|(n, c)| n + omega_std * (c - n))
        .collect())
}

/// Perturbed-anchored rule: `eps_pert + omega * (eps_cond - eps_pert)`.
pub fn motioncfg_combine(eps_pert: &[f64], eps_cond: &[f64], omega: f64) -> Result<Vec<f64>> {
    cfg_combine(eps_pert, eps_cond, omega)
}

/// Condition-anchored rule: `eps_cond + omega * (eps_cond - eps_pert)`.
pub fn motioncfg_anchored(eps_cond: &[f64], eps_pert: &[f64], omega: f64) -> Result<Vec<f64>> {
    same_len(eps_cond, eps_pert)?;
    Ok(eps_cond
        .iter()
        .zip(eps_pert)
        .map(|(c, p)| c + omega * (c - p))
        .collect())
}

/// Clean estimate `(z_t - sqrt(1 - abar) eps) / sqrt(abar)`.
pub fn tweedie(z_t: &[f64], eps: &[f64], sched: &NoiseSchedule, t: usize) -> Result<Vec<f64>> {
    let ab = sched.noisy_alpha_bar(t)?;
    same_len(z_t, eps)?;
    let (sa, so) = (ab.sqrt(), (1.0 - ab).sqrt());
    Ok(z_t.iter().zip(eps).map(|(z, e)| (z - so * e) / sa).collect())
}

/// `-||eps_cond - eps_pert||^2`.
pub fn manifold_loss(eps_cond: &[f64], eps_pert: &[f64]) -> Result<f64> {
    same_len(eps_cond, eps_pert)?;
    Ok(-eps_cond
        .iter()
        .zip(eps_pert)
        .map(|(c, p)| (c - p) * (c - p))
        .sum::<f64>())
}

/// The same loss written over clean estimates:
/// `-(abar / (1 - abar)) * ||z_hat_c - z_hat_pert||^2`.
pub fn manifold_loss_clean(z_hat_c: &[f64], z_hat_pert: &[f64], sched: &NoiseSchedule, t: usize) -> Result<f64> {
    let ab = sched.noisy_alpha_bar(t)?;
    same_len(z_hat_c, z_hat_pert)?;
    let sq: f64 = z_hat_c.iter().zip(z_hat_pert).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(-(ab / (1.0 - ab)) * sq)
}

/// Gradient of [`manifold_loss_clean`] with respect to `z_hat_c`.
pub fn manifold_gradient(z_hat_c: &[f64], z_hat_pert: &[f64], sched: &NoiseSchedule, t: usize) -> Result<Vec<f64>> {
    let ab = sched.noisy_alpha_bar(t)?;
    same_len(z_hat_c, z_hat_pert)?;
    let k = -2.0 * ab / (1.0 - ab);
    Ok(z_hat_c.iter().zip(z_hat_pert).map(|(a, b)| k * (a - b)).collect())
}

/// One gradient-descent step of size `gamma` on the repulsion loss.
pub fn extrapolation_update(
    z_hat_c: &[f64],
    z_hat_pert: &[f64],
    gamma: f64,
    sched: &NoiseSchedule,
    t: usize,
) -> Result<Vec<f64>> {
    if gamma.is_nan() || gamma <= 0.0 {
        return Err(Error::NonPositiveGamma(gamma));
    }
    let k = omega_from_gamma(gamma, sched, t)?;
    same_len(z_hat_c, z_hat_pert)?;
    Ok(z_hat_c.iter().zip(z_hat_pert).map(|(a, b)| a + k * (a - b)).collect())
}

/// Inverse Tweedie: noise prediction that maps `z_t` to `z_updated`.
pub fn effective_noise(z_t: &[f64], z_updated: &[f64], sched: &NoiseSchedule, t: usize) -> Result<Vec<f64>> {
    let ab = sched.noisy_alpha_bar(t)?;
    same_len(z_t, z_updated)?;
    let (sa, so) = (ab.sqrt(), (1.0 - ab).sqrt());
    Ok(z_t.iter().zip(z_updated).map(|(z, x)| (z - sa * x) / so).collect())
}

/// `omega = 2 * gamma * abar / (1 - abar)`.
pub fn omega_from_gamma(gamma: f64, sched: &NoiseSchedule, t: usize) -> Result<f64> {
    let ab = sched.noisy_alpha_bar(t)?;
    Ok(2.0 * gamma * ab / (1.0 - ab))
}

/// Inverse of [`omega_from_gamma`].
pub fn gamma_from_omega(omega: f64, sched: &NoiseSchedule, t: usize) -> Result<f64> {
    let ab = sched.noisy_alpha_bar(t)?;
    Ok(omega * (1.0 - ab) / (2.0 * ab))
}

fn check_cads(tau1: f64, tau2: f64) -> Result<()> {
    if !(0.0 <= tau1 && tau1 < tau2 && tau2 <= 1.0) {
        return Err(Error::InvalidTauOrder { tau1, tau2 });
    }
    Ok(())
}

/// Annealing weight at step `t`. Normalised time is `t / T`, so `1` is the
/// noisiest step: the condition is fully kept below `tau1` and fully
/// replaced by noise above `tau2`.
pub fn cads_gamma(t: usize, steps: usize, tau1: f64, tau2: f64) -> Result<f64> {
    check_cads(tau1, tau2)?;
    let u = t as f64 / steps as f64;
    Ok(if u <= tau1 {
        1.0
    } else if u >= tau2 {
        0.0
    } else {
        (tau2 - u) / (tau2 - tau1)
    })
}

/// Condition-annealed embedding `sqrt(g) c + s sqrt(1 - g) n`, optionally
/// rescaled back to the norm of `c`.
#[allow(clippy::too_many_arguments)]
pub fn cads_condition(
    c: &ConditionEmbedding,
    t: usize,
    sched: &NoiseSchedule,
    tau1: f64,
    tau2: f64,
    noise_scale: f64,
    rescale: bool,
    seed: u64,
) -> Result<ConditionEmbedding> {
    sched.noisy_alpha_bar(t)?;
    if noise_scale.is_nan() || noise_scale < 0.0 {
        return Err(Error::InvalidRange {
            what: "cads noise scale",
            detail: format!("must be >= 0, got {noise_scale}"),
        });
    }
    let g = cads_gamma(t, sched.steps(), tau1, tau2)?;
    if g == 1.0 {
        return Ok(c.clone());
    }
    let n = rng::normal_vec(seed, Domain::Cads, t as u64, c.len());
    let (a, b) = (g.sqrt(), noise_scale * (1.0 - g).sqrt());
    let mut values: Vec<f64> = c.values().iter().zip(&n).map(|(v, e)| a * v + b * e).collect();
    if rescale {
        let target = c.norm();
        let now = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if now > 0.0 {
            let k = target / now;
            for v in &mut values {
                *v *= k;
            }
        }
    }
    c.with_values(values)
}

/// Guidance scale inside the inclusive interval, `1` (pure conditional)
/// outside it.
pub fn interval_gate(t: usize, interval: (usize, usize), omega_std: f64) -> f64 {
    if (interval.0..=interval.1).contains(&t) {
        omega_std
    } else {
        1.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::IndexGroups;
    use crate::schedule::build_linear_schedule;

    fn quarter() -> NoiseSchedule {
        // alpha_bar = [1, 0.5, 0.25]
        build_linear_schedule(2, 0.5, 0.5).unwrap()
    }

    #[test]
    fn cfg_cases() {
        assert_eq!(cfg_combine(&[0.3, -1.0], &[0.7, 2.0], 1.0).unwrap(), vec![0.7, 2.0]);
        let g = cfg_combine(&[0.2], &[0.5], 6.0).unwrap();
        assert!((g[0] - 2.0).abs() < 1e-12);
        assert_eq!(cfg_combine(&[0.4], &[0.4], 7.5).unwrap(), vec![0.4]);
        assert!(cfg_combine(&[0.4], &[0.4, 1.0], 2.0).is_err());
    }

    #[test]
    fn motioncfg_cases() {
        assert_eq!(motioncfg_combine(&[0.1], &[0.4], 1.0).unwrap(), vec![0.4]);
        assert!((motioncfg_combine(&[0.1], &[0.4], 2.0).unwrap()[0] - 0.7).abs() < 1e-12);
        assert_eq!(motioncfg_combine(&[0.4], &[0.4], 6.0).unwrap(), vec![0.4]);

        assert_eq!(motioncfg_anchored(&[0.4], &[0.1], 0.0).unwrap(), vec![0.4]);
        assert!((motioncfg_anchored(&[0.4], &[0.1], 2.0).unwrap()[0] - 1.0).abs() < 1e-12);
        assert_eq!(
            motioncfg_anchored(&[0.4, -3.0], &[0.4, -3.0], 9.0).unwrap(),
            vec![0.4, -3.0]
        );
        assert!(motioncfg_anchored(&[0.4], &[], 2.0).is_err());
    }

    #[test]
    fn tweedie_cases() {
        let s = quarter();
        assert_eq!(tweedie(&[1.0], &[0.0], &s, 2).unwrap(), vec![2.0]);
        let v = tweedie(&[1.0], &[0.5], &s, 2).unwrap()[0];
        assert!((v - 1.133_974_596_215_561_4).abs() < 1e-12);
        assert!(tweedie(&[1.0], &[0.5], &s, 0).is_err());
        assert!(tweedie(&[1.0], &[0.5], &s, 3).is_err());
    }

    #[test]
    fn tweedie_round_trip() {
        let s = build_linear_schedule(50, 1e-4, 0.02).unwrap();
        let x = [0.3, -1.2, 4.0];
        let e = [1.1, 0.2, -0.7];
        let (sa, so) = s.signal_coeffs(17).unwrap();
        let z: Vec<f64> = x.iter().zip(&e).map(|(a, b)| sa * a + so * b).collect();
        let back = tweedie(&z, &e, &s, 17).unwrap();
        for (a, b) in back.iter().zip(&x) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn loss_cases() {
        assert_eq!(manifold_loss(&[0.2, 0.1], &[0.2, 0.1]).unwrap(), 0.0);
        assert!((manifold_loss(&[0.5], &[0.2]).unwrap() + 0.09).abs() < 1e-12);
    }

    #[test]
    fn gradient_cases() {
        let s = quarter();
        assert_eq!(
            manifold_gradient(&[1.0, 2.0], &[1.0, 2.0], &s, 1).unwrap(),
            vec![0.0, 0.0]
        );
        assert!((manifold_gradient(&[1.5], &[0.5], &s, 1).unwrap()[0] + 2.0).abs() < 1e-12);
    }

    #[test]
    fn extrapolation_cases() {
        let s = quarter();
        assert_eq!(extrapolation_update(&[0.3], &[0.3], 1.0, &s, 2).unwrap(), vec![0.3]);
        // abar = 0.5: 2 * gamma * 0.5 / 0.5 = 1 at gamma = 0.5.
        assert_eq!(extrapolation_update(&[1.0], &[0.0], 0.5, &s, 1).unwrap(), vec![2.0]);
        assert!(matches!(
            extrapolation_update(&[1.0], &[0.0], 0.0, &s, 1),
            Err(Error::NonPositiveGamma(_))
        ));
    }

    #[test]
    fn effective_noise_cases() {
        let s = quarter();
        let z = [0.8, -0.1];
        let eps = [0.25, 1.5];
        let x = tweedie(&z, &eps, &s, 2).unwrap();
        let back = effective_noise(&z, &x, &s, 2).unwrap();
        for (a, b) in back.iter().zip(&eps) {
            assert!((a - b).abs() < 1e-12);
        }
        let so = 0.75f64.sqrt();
        let zero = effective_noise(&z, &[0.0, 0.0], &s, 2).unwrap();
        assert!((zero[0] - 0.8 / so).abs() < 1e-12);
    }

    #[test]
    fn omega_gamma_round_trip() {
        let s = build_linear_schedule(50, 1e-4, 0.02).unwrap();
        for t in [1, 10, 50] {
            let w = omega_from_gamma(0.37, &s, t).unwrap();
            assert!((gamma_from_omega(w, &s, t).unwrap() - 0.37).abs() < 1e-12);
        }
    }

    fn emb() -> ConditionEmbedding {
        ConditionEmbedding::new(
            (0..15).map(|i| i as f64 * 0.2 - 1.0).collect(),
            IndexGroups::slot_layout(3),
        )
        .unwrap()
    }

    #[test]
    fn cads_regimes() {
        let s = build_linear_schedule(10, 1e-4, 0.02).unwrap();
        let c = emb();
        // t/T = 0.5 <= tau1: untouched
        assert_eq!(cads_condition(&c, 5, &s, 0.6, 0.9, 0.1, true, 3).unwrap(), c);
        // t/T = 1.0 >= tau2, no rescale: pure scaled noise
        let out = cads_condition(&c, 10, &s, 0.6, 0.9, 0.1, false, 3).unwrap();
        let n = rng::normal_vec(3, Domain::Cads, 10, 15);
        for (o, e) in out.values().iter().zip(&n) {
            assert_eq!(*o, 0.1 * e);
        }
        // gamma = 0.5 at u = 0.75 with rescale: norm preserved
        assert_eq!(cads_gamma(15, 20, 0.6, 0.9).unwrap(), 0.5);
        let s20 = build_linear_schedule(20, 1e-4, 0.02).unwrap();
        let half = cads_condition(&c, 15, &s20, 0.6, 0.9, 0.1, true, 3).unwrap();
        assert!((half.norm() - c.norm()).abs() <= 1e-10 * c.norm());
        assert_ne!(half, c);
        assert!(matches!(
            cads_condition(&c, 5, &s, 0.9, 0.6, 0.1, true, 3),
            Err(Error::InvalidTauOrder { .. })
        ));
    }

    #[test]
    fn interval_gate_cases() {
        assert_eq!(interval_gate(20, (10, 40), 6.0), 6.0);
        assert_eq!(interval_gate(41, (10, 40), 6.0), 1.0);
        assert_eq!(interval_gate(9, (10, 40), 6.0), 1.0);
        for t in 1..=50 {
            assert_eq!(interval_gate(t, (1, 50), 6.0), 6.0);
        }
    }

    #[test]
    fn policy_validation() {
        assert!(GuidancePolicy::motion_cfg(6.0, 6.0, 0.2, 0.3).validate(50).is_ok());
        assert!(GuidancePolicy::motion_cfg(6.0, 6.0, 1.5, 0.3).validate(50).is_err());
        assert!(GuidancePolicy::standard_cfg(0.5).validate(50).is_err());
        assert!(GuidancePolicy::interval(6.0, 0, 40).validate(50).is_err());
        assert!(GuidancePolicy::interval(6.0, 10, 51).validate(50).is_err());
        assert!(GuidancePolicy::interval(6.0, 10, 40).validate(50).is_ok());
    }
}
