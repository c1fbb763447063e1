//! Deterministic reverse diffusion with per-step guidance dispatch.

use crate::embedding::{perturb, ConditionEmbedding, PerturbationSpec};
use crate::error::{Error, Result};
use crate::guidance::{
    cads_condition, cfg_combine, interval_gate, motioncfg_anchored, motioncfg_combine, tweedie, Anchor, GuidanceKind,
    GuidancePolicy, MotionRule,
};
use crate::rng::{self, Domain};
use crate::schedule::NoiseSchedule;
use crate::toymodel::{LatentVideo, WorldModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Phase {
    /// Warm-up steps that use the plain conditional prediction.
    Delayed,
    /// Perturbation-guided steps at the start of the trajectory.
    Motion,
    /// Standard guidance for the remaining steps.
    Refine,
}

impl Phase {
    pub fn name(self) -> &'static str {
        match self {
            Phase::Delayed => "delayed",
            Phase::Motion => "motion",
            Phase::Refine => "refine",
        }
    }
}

/// Phase of step `t` (counting down from `steps` to 1). The first
/// `delay_steps` steps are delayed; after that, steps with
/// `t > (1 - tau) * steps` are motion steps.
pub fn phase_of(t: usize, steps: usize, tau: f64, delay_steps: usize) -> Phase {
    if t + delay_steps > steps {
        return Phase::Delayed;
    }
    // Ties within rounding error of the boundary count as not greater.
    if t as f64 > (1.0 - tau) * steps as f64 + 1e-9 {
        Phase::Motion
    } else {
        Phase::Refine
    }
}

/// Deterministic DDIM update (eta = 0) from step `t` to `t - 1`.
pub fn ddim_step(z_t: &[f64], eps: &[f64], sched: &NoiseSchedule, t: usize) -> Result<Vec<f64>> {
    let x0 = tweedie(z_t, eps, sched, t)?;
    let prev = sched.alpha_bar(t - 1)?;
    let (sa, so) = (prev.sqrt(), (1.0 - prev).sqrt());
    Ok(x0.iter().zip(eps).map(|(x, e)| sa * x + so * e).collect())
}

/// `z_T ~ N(0, I)` for a seed. Every policy run with the same seed starts
/// from this exact latent.
pub fn initial_noise(world: &WorldModel, seed: u64) -> LatentVideo {
    let data = rng::normal_vec(seed, Domain::InitialNoise, 0, world.latent_dim());
    LatentVideo::from_vec(world.frames(), world.slots(), data).expect("latent_dim matches shape")
}

#[derive(Debug, Clone, Copy)]
pub struct RunConfig<'a> {
    pub policy: &'a GuidancePolicy,
    pub schedule: &'a NoiseSchedule,
    pub world: &'a WorldModel,
    pub condition: &'a ConditionEmbedding,
    pub seed: u64,
    pub record_trajectory: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub t: usize,
    pub phase: Phase,
    pub eps_norm: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub final_latent: LatentVideo,
    pub per_step_log: Option<Vec<StepRecord>>,
}

struct Evaluator<'a> {
    world: &'a WorldModel,
    mean_cond: Vec<f64>,
    mean_neg: Option<Vec<f64>>,
}

impl Evaluator<'_> {
    fn anchor_eps(&self, alpha_bar: f64, z: &[f64]) -> Vec<f64> {
        match &self.mean_neg {
            Some(mean) => self.world.eps_from_mean(alpha_bar, z, mean),
            None => self.world.eps_unconditional_raw(alpha_bar, z),
        }
    }
}

/// Runs the full reverse loop for one policy and seed.
pub fn run(cfg: &RunConfig<'_>) -> Result<RunResult> {
    let RunConfig {
        policy,
        schedule,
        world,
        condition,
        seed,
        record_trajectory,
    } = *cfg;
    let steps = schedule.steps();
    policy.validate(steps)?;
    let mean_cond = world.mean_latent(condition)?.into_vec();
    let mean_neg = match &policy.anchor {
        Anchor::Null => None,
        Anchor::Negative(neg) => Some(world.mean_latent(neg)?.into_vec()),
    };
    let eval = Evaluator {
        world,
        mean_cond,
        mean_neg,
    };
    let pert = PerturbationSpec {
        targets: policy.targets.clone(),
        sigma_c: policy.sigma_c,
        seed,
    };
    let tau = if policy.kind == GuidanceKind::MotionCfg {
        policy.tau
    } else {
        0.0
    };

    let mut z = initial_noise(world, seed).into_vec();
    let mut log = record_trajectory.then(|| Vec::with_capacity(steps));
    for t in (1..=steps).rev() {
        let ab = schedule.alpha_bar(t)?;
        let phase = phase_of(t, steps, tau, policy.delay_steps);
        let eps_cond = world.eps_from_mean(ab, &z, &eval.mean_cond);
        let guided = match (phase, policy.kind) {
            (Phase::Delayed, _) => eps_cond,
            (Phase::Motion, _) => {
                let c_pert = perturb(condition, &pert, t as u64)?;
                let mean_pert = world.mean_latent(&c_pert)?;
                let eps_pert = world.eps_from_mean(ab, &z, mean_pert.as_slice());
                match policy.rule {
                    MotionRule::Anchored => motioncfg_anchored(&eps_cond, &eps_pert, policy.omega)?,
                    MotionRule::Perturbed => motioncfg_combine(&eps_pert, &eps_cond, policy.omega)?,
                }
            }
            (Phase::Refine, GuidanceKind::Cads) => {
                let p = policy.cads.unwrap_or_default();
                let annealed = cads_condition(condition, t, schedule, p.tau1, p.tau2, p.noise_scale, p.rescale, seed)?;
                let mean = world.mean_latent(&annealed)?;
                let eps_annealed = world.eps_from_mean(ab, &z, mean.as_slice());
                cfg_combine(&eval.anchor_eps(ab, &z), &eps_annealed, policy.omega_std)?
            }
            (Phase::Refine, GuidanceKind::IntervalGuidance) => {
                let interval = policy.interval.unwrap_or((1, steps));
                let scale = interval_gate(t, interval, policy.omega_std);
                if scale == 1.0 {
                    eps_cond
                } else {
                    cfg_combine(&eval.anchor_eps(ab, &z), &eps_cond, scale)?
                }
            }
            (Phase::Refine, _) => {
                if policy.omega_std == 1.0 {
                    eps_cond
                } else {
                    cfg_combine(&eval.anchor_eps(ab, &z), &eps_cond, policy.omega_std)?
                }
            }
        };
        if let Some(log) = log.as_mut() {
            log.push(StepRecord {
                t,
                phase,
                eps_norm: guided.iter().map(|v| v * v).sum::<f64>().sqrt(),
            });
        }
        z = ddim_step(&z, &guided, schedule, t)?;
    }
    let final_latent = LatentVideo::from_vec(world.frames(), world.slots(), z)?;
    if !final_latent.is_finite() {
        return Err(Error::NonFinite("final latent"));
    }
    Ok(RunResult {
        final_latent,
        per_step_log: log,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::IndexGroups;
    use crate::schedule::build_linear_schedule;
    use crate::toymodel::WorldParams;

    fn condition(seed: u64) -> ConditionEmbedding {
        let values = rng::normal_vec(seed, Domain::CleanSample, 99, 15);
        ConditionEmbedding::new(values, IndexGroups::slot_layout(3)).unwrap()
    }

    #[test]
    fn phase_partition_default() {
        for t in 41..=50 {
            assert_eq!(phase_of(t, 50, 0.2, 0), Phase::Motion, "t={t}");
        }
        for t in 1..=40 {
            assert_eq!(phase_of(t, 50, 0.2, 0), Phase::Refine, "t={t}");
        }
        assert!((1..=50).all(|t| phase_of(t, 50, 0.0, 0) != Phase::Motion));
        assert!((1..=50).all(|t| phase_of(t, 50, 1.0, 0) == Phase::Motion));
    }

    #[test]
    fn phase_sequence_is_ordered() {
        let rank = |p: Phase| match p {
            Phase::Delayed => 0,
            Phase::Motion => 1,
            Phase::Refine => 2,
        };
        for steps in [2usize, 7, 50, 51] {
            for delay in [0usize, 1, 3, 60] {
                for tau in [0.0, 0.1, 0.15, 0.3, 0.6, 1.0] {
                    let seq: Vec<u8> = (1..=steps)
                        .rev()
                        .map(|t| rank(phase_of(t, steps, tau, delay)))
                        .collect();
                    assert!(seq.windows(2).all(|w| w[0] <= w[1]), "{steps} {delay} {tau}");
                    let delayed = seq.iter().filter(|r| **r == 0).count();
                    assert_eq!(delayed, delay.min(steps));
                }
            }
        }
    }

    #[test]
    fn ddim_terminal_step_is_clean_estimate() {
        let s = build_linear_schedule(50, 1e-4, 0.02).unwrap();
        let z = [0.4, -2.0, 1.3];
        let e = [0.1, 0.7, -0.2];
        assert_eq!(ddim_step(&z, &e, &s, 1).unwrap(), tweedie(&z, &e, &s, 1).unwrap());
    }

    #[test]
    fn ddim_recovers_clean_with_true_noise() {
        let s = build_linear_schedule(50, 1e-4, 0.02).unwrap();
        let x = [1.0, 2.0, -0.5];
        let e = [0.3, -0.3, 1.0];
        let (sa, so) = s.signal_coeffs(25).unwrap();
        let z: Vec<f64> = x.iter().zip(&e).map(|(a, b)| sa * a + so * b).collect();
        let next = ddim_step(&z, &e, &s, 25).unwrap();
        let (pa, po) = s.signal_coeffs(24).unwrap();
        for i in 0..3 {
            assert!((next[i] - (pa * x[i] + po * e[i])).abs() < 1e-12);
        }
    }

    #[test]
    fn single_gaussian_conditional_converges_to_mean() {
        let s = build_linear_schedule(50, 1e-4, 0.02).unwrap();
        let c = condition(1);
        let world = WorldModel::with_prototypes(8, 3, 0.0, vec![c.values().to_vec()], vec![1.0]).unwrap();
        let policy = GuidancePolicy::standard_cfg(1.0);
        for seed in 0..5 {
            let out = run(&RunConfig {
                policy: &policy,
                schedule: &s,
                world: &world,
                condition: &c,
                seed,
                record_trajectory: false,
            })
            .unwrap();
            let mu = world.mean_latent(&c).unwrap();
            for (a, b) in out.final_latent.as_slice().iter().zip(mu.as_slice()) {
                assert!((a - b).abs() < 1e-4);
            }
        }
    }

    #[test]
    fn deterministic_and_logged() {
        let s = build_linear_schedule(50, 1e-4, 0.02).unwrap();
        let world = WorldModel::new(&WorldParams::default()).unwrap();
        let c = condition(3);
        let policy = GuidancePolicy::motion_cfg(6.0, 6.0, 0.2, 0.3).with_delay(2);
        let cfg = RunConfig {
            policy: &policy,
            schedule: &s,
            world: &world,
            condition: &c,
            seed: 42,
            record_trajectory: true,
        };
        let a = run(&cfg).unwrap();
        let b = run(&cfg).unwrap();
        assert_eq!(a, b);
        let log = a.per_step_log.unwrap();
        assert_eq!(log.len(), 50);
        assert_eq!(log[0].t, 50);
        assert_eq!(log[0].phase, Phase::Delayed);
        assert_eq!(log[2].phase, Phase::Motion);
        assert_eq!(log[49].phase, Phase::Refine);
    }

    #[test]
    fn zero_sigma_matches_plain_conditional() {
        let s = build_linear_schedule(50, 1e-4, 0.02).unwrap();
        let world = WorldModel::new(&WorldParams::default()).unwrap();
        let c = condition(4);
        let mcfg = GuidancePolicy::motion_cfg(1.0, 1.0, 0.3, 0.0);
        let std = GuidancePolicy::standard_cfg(1.0);
        let go = |p: &GuidancePolicy| {
            run(&RunConfig {
                policy: p,
                schedule: &s,
                world: &world,
                condition: &c,
                seed: 8,
                record_trajectory: false,
            })
            .unwrap()
            .final_latent
        };
        assert_eq!(go(&mcfg), go(&std));
    }

    #[test]
    fn tau_zero_matches_standard_cfg() {
        let s = build_linear_schedule(50, 1e-4, 0.02).unwrap();
        let world = WorldModel::new(&WorldParams::default()).unwrap();
        let c = condition(5);
        let mcfg = GuidancePolicy::motion_cfg(6.0, 6.0, 0.0, 0.5);
        let std = GuidancePolicy::standard_cfg(6.0);
        let go = |p: &GuidancePolicy| {
            run(&RunConfig {
                policy: p,
                schedule: &s,
                world: &world,
                condition: &c,
                seed: 8,
                record_trajectory: false,
            })
            .unwrap()
            .final_latent
        };
        assert_eq!(go(&mcfg), go(&std));
    }

    #[test]
    fn invalid_policy_is_rejected() {
        let s = build_linear_schedule(50, 1e-4, 0.02).unwrap();
        let world = WorldModel::new(&WorldParams::default()).unwrap();
        let c = condition(5);
        let bad = GuidancePolicy::motion_cfg(6.0, 6.0, 1.2, 0.5);
        assert!(run(&RunConfig {
            policy: &bad,
            schedule: &s,
            world: &world,
            condition: &c,
            seed: 0,
            record_trajectory: false,
        })
        .is_err());
    }
}
