//! Self-check suite behind `mcfg verify`.
//!
//! Each property compares the library against an independent oracle:
//! finite differences of hand-written log-densities, direct evaluation of
//! the closed-form guidance scale, or bitwise comparison of sampler runs.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::embedding::{perturb, ConditionEmbedding, Group, PerturbationSpec};
use crate::guidance::{
    cfg_combine, effective_noise, extrapolation_update, manifold_gradient, manifold_loss, manifold_loss_clean,
    motioncfg_anchored, tweedie, GuidancePolicy, MotionRule,
};
use crate::sampler::{ddim_step, initial_noise, run, RunConfig};
use crate::schedule::{NoiseSchedule, ScheduleParams};
use crate::toymodel::{LatentVideo, WorldModel, WorldParams};

pub const IDENTITY_TOL: f64 = 1e-10;
pub const GRADIENT_TOL: f64 = 1e-5;
pub const GRADIENT_STEP: f64 = 1e-4;
pub const LOSS_TOL: f64 = 1e-10;
pub const SCORE_TOL: f64 = 1e-5;
pub const SCORE_STEP: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct PropertyOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

struct Fixture {
    sched: NoiseSchedule,
    world: WorldModel,
}

impl Fixture {
    fn new() -> Self {
        Self {
            sched: ScheduleParams::default().build().expect("default schedule is valid"),
            world: WorldModel::new(&WorldParams::default()).expect("default world is valid"),
        }
    }

    fn steps(&self) -> usize {
        self.sched.steps()
    }
}

fn normals(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect()
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let norm: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    if norm == 0.0 {
        diff
    } else {
        diff / norm
    }
}

fn latent(world: &WorldModel, data: Vec<f64>) -> LatentVideo {
    LatentVideo::from_vec(world.frames(), world.slots(), data).expect("latent size")
}

fn embedding(world: &WorldModel, values: Vec<f64>) -> ConditionEmbedding {
    ConditionEmbedding::new(values, world.default_groups()).expect("embedding size")
}

fn outcome(name: &'static str, passed: bool, detail: String) -> PropertyOutcome {
    PropertyOutcome { name, passed, detail }
}

/// Tweedie, gradient step and inverse Tweedie reproduce the condition-
/// anchored rule with `omega = 2 gamma abar / (1 - abar)`.
pub fn derivation_identity(probes: usize, seed: u64) -> PropertyOutcome {
    let fx = Fixture::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let start = Instant::now();
    let mut worst = 0.0f64;
    for p in 0..probes {
        let t = rng.random_range(1..=fx.steps());
        let z = latent(&fx.world, normals(&mut rng, fx.world.latent_dim(), 2.0));
        let c = embedding(&fx.world, normals(&mut rng, fx.world.embedding_dim(), 1.0));
        let sigma_c: f64 = rng.random_range(0.0..=1.0);
        let gamma = 5.0 * (1.0 - rng.random::<f64>());
        let spec = PerturbationSpec::new(Group::Motion, sigma_c, seed.wrapping_add(p as u64));
        let cp = perturb(&c, &spec, t as u64).expect("valid perturbation");
        let ec = fx.world.eps_conditional(&fx.sched, &z, t, &c).expect("eps");
        let ep = fx.world.eps_conditional(&fx.sched, &z, t, &cp).expect("eps");
        let zc = tweedie(z.as_slice(), ec.as_slice(), &fx.sched, t).expect("tweedie");
        let zp = tweedie(z.as_slice(), ep.as_slice(), &fx.sched, t).expect("tweedie");
        let upd = extrapolation_update(&zc, &zp, gamma, &fx.sched, t).expect("update");
        let eff = effective_noise(z.as_slice(), &upd, &fx.sched, t).expect("inverse");
        let ab = fx.sched.alpha_bars()[t];
        let omega = 2.0 * gamma * ab / (1.0 - ab);
        let reference = motioncfg_anchored(ec.as_slice(), ep.as_slice(), omega).expect("rule");
        worst = worst.max(rel_err(&eff, &reference));
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        "derivation identity",
        worst <= IDENTITY_TOL,
        format!("{probes} probes, max rel err {worst:.3e} (tol {IDENTITY_TOL:e}), {secs:.3}s"),
    )
}

/// Analytic gradient against central differences of the clean-space loss.
pub fn gradient_check(probes: usize, seed: u64) -> PropertyOutcome {
    let fx = Fixture::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = fx.world.latent_dim();
    let start = Instant::now();
    let mut worst = 0.0f64;
    for _ in 0..probes {
        let t = rng.random_range(1..=fx.steps());
        let zc: Vec<f64> = (0..d).map(|_| rng.random_range(-10.0..=10.0)).collect();
        let zp: Vec<f64> = (0..d).map(|_| rng.random_range(-10.0..=10.0)).collect();
        let g = manifold_gradient(&zc, &zp, &fx.sched, t).expect("gradient");
        let mut fd = vec![0.0; d];
        let mut probe = zc.clone();
        for i in 0..d {
            probe[i] = zc[i] + GRADIENT_STEP;
            let up = manifold_loss_clean(&probe, &zp, &fx.sched, t).expect("loss");
            probe[i] = zc[i] - GRADIENT_STEP;
            let down = manifold_loss_clean(&probe, &zp, &fx.sched, t).expect("loss");
            probe[i] = zc[i];
            fd[i] = (up - down) / (2.0 * GRADIENT_STEP);
        }
        worst = worst.max(rel_err(&g, &fd));
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        "gradient check",
        worst <= GRADIENT_TOL,
        format!("{probes} probes, max rel err {worst:.3e} (tol {GRADIENT_TOL:e}), {secs:.3}s"),
    )
}

/// Noise-space loss equals the clean-space loss for a shared `z_t`.
pub fn loss_identity(probes: usize, seed: u64) -> PropertyOutcome {
    let fx = Fixture::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for p in 0..probes {
        let t = rng.random_range(1..=fx.steps());
        let z = latent(&fx.world, normals(&mut rng, fx.world.latent_dim(), 2.0));
        let c = embedding(&fx.world, normals(&mut rng, fx.world.embedding_dim(), 1.0));
        let sigma_c = rng.random_range(0.1..=1.0);
        let spec = PerturbationSpec::new(Group::Motion, sigma_c, seed.wrapping_add(p as u64));
        let cp = perturb(&c, &spec, t as u64).expect("valid perturbation");
        let ec = fx.world.eps_conditional(&fx.sched, &z, t, &c).expect("eps");
        let ep = fx.world.eps_conditional(&fx.sched, &z, t, &cp).expect("eps");
        let lhs = manifold_loss(ec.as_slice(), ep.as_slice()).expect("loss");
        let zc = tweedie(z.as_slice(), ec.as_slice(), &fx.sched, t).expect("tweedie");
        let zp = tweedie(z.as_slice(), ep.as_slice(), &fx.sched, t).expect("tweedie");
        let rhs = manifold_loss_clean(&zc, &zp, &fx.sched, t).expect("loss");
        worst = worst.max((lhs - rhs).abs() / lhs.abs().max(rhs.abs()).max(f64::MIN_POSITIVE));
    }
    outcome(
        "loss identity",
        worst <= LOSS_TOL,
        format!("{probes} probes, max rel err {worst:.3e} (tol {LOSS_TOL:e})"),
    )
}

/// Mean trajectory written out independently of the world model.
fn oracle_mean(c: &[f64], frames: usize, slots: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(frames * slots * 3);
    for f in 0..frames {
        for m in 0..slots {
            let ff = f as f64;
            out.push(c[2 * m] + ff * c[2 * slots + 2 * m]);
            out.push(c[2 * m + 1] + ff * c[2 * slots + 2 * m + 1]);
            out.push(c[4 * slots + m]);
        }
    }
    out
}

fn log_gauss(z: &[f64], mean: &[f64], scale: f64, var: f64) -> f64 {
    let sq: f64 = z.iter().zip(mean).map(|(a, m)| (a - scale * m).powi(2)).sum();
    -0.5 * sq / var - 0.5 * z.len() as f64 * (2.0 * std::f64::consts::PI * var).ln()
}

fn fd_noise(z: &[f64], so: f64, logp: impl Fn(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = z.to_vec();
    (0..z.len())
        .map(|i| {
            probe[i] = z[i] + SCORE_STEP;
            let up = logp(&probe);
            probe[i] = z[i] - SCORE_STEP;
            let down = logp(&probe);
            probe[i] = z[i];
            -so * (up - down) / (2.0 * SCORE_STEP)
        })
        .collect()
}

/// Both noise predictions against finite-difference scores of the
/// closed-form conditional and mixture log-densities.
pub fn score_oracle(probes: usize, seed: u64) -> PropertyOutcome {
    let fx = Fixture::new();
    let w = &fx.world;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (frames, slots, s2) = (w.frames(), w.slots(), w.sigma_data().powi(2));
    let proto_means: Vec<Vec<f64>> = w.prototypes().iter().map(|p| oracle_mean(p, frames, slots)).collect();
    let log_pi: Vec<f64> = w.prototype_weights().iter().map(|p| p.ln()).collect();
    let (mut worst_c, mut worst_u) = (0.0f64, 0.0f64);
    for p in 0..probes {
        let t = rng.random_range(1..=fx.steps());
        let ab = fx.sched.alpha_bars()[t];
        let (sa, so) = (ab.sqrt(), (1.0 - ab).sqrt());
        let var = ab * s2 + (1.0 - ab);
        let c_vals = normals(&mut rng, w.embedding_dim(), 1.0);
        // Alternate on-distribution and off-distribution probes.
        let z_data: Vec<f64> = if p % 2 == 0 {
            let k = rng.random_range(0..proto_means.len());
            proto_means[k]
                .iter()
                .map(|m| sa * m + var.sqrt() * rng.sample::<f64, _>(StandardNormal))
                .collect()
        } else {
            normals(&mut rng, w.latent_dim(), 1.0)
        };
        let z = latent(w, z_data.clone());

        let mu_c = oracle_mean(&c_vals, frames, slots);
        let fd_c = fd_noise(&z_data, so, |x| log_gauss(x, &mu_c, sa, var));
        let ec = w.eps_conditional(&fx.sched, &z, t, &embedding(w, c_vals)).expect("eps");
        worst_c = worst_c.max(rel_err(ec.as_slice(), &fd_c));

        let log_mix = |x: &[f64]| {
            let terms: Vec<f64> = proto_means
                .iter()
                .zip(&log_pi)
                .map(|(m, lp)| lp + log_gauss(x, m, sa, var))
                .collect();
            let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            max + terms.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
        };
        let fd_u = fd_noise(&z_data, so, log_mix);
        let eu = w.eps_unconditional(&fx.sched, &z, t).expect("eps");
        worst_u = worst_u.max(rel_err(eu.as_slice(), &fd_u));
    }
    outcome(
        "score oracle",
        worst_c <= SCORE_TOL && worst_u <= SCORE_TOL,
        format!(
            "{probes} probes each, conditional max rel err {worst_c:.3e}, unconditional {worst_u:.3e} (tol {SCORE_TOL:e})"
        ),
    )
}

fn pure_conditional(fx: &Fixture, c: &ConditionEmbedding, seed: u64) -> Vec<f64> {
    let mut z = initial_noise(&fx.world, seed);
    for t in (1..=fx.steps()).rev() {
        let eps = fx.world.eps_conditional(&fx.sched, &z, t, c).expect("eps");
        z = latent(
            &fx.world,
            ddim_step(z.as_slice(), eps.as_slice(), &fx.sched, t).expect("step"),
        );
    }
    z.into_vec()
}

fn final_latent(fx: &Fixture, policy: &GuidancePolicy, c: &ConditionEmbedding, seed: u64) -> Vec<f64> {
    run(&RunConfig {
        policy,
        schedule: &fx.sched,
        world: &fx.world,
        condition: c,
        seed,
        record_trajectory: false,
    })
    .expect("run")
    .final_latent
    .into_vec()
}

fn bits(v: &[f64]) -> Vec<u64> {
    v.iter().map(|x| x.to_bits()).collect()
}

/// Bit-exact reductions of the guided sampler and combination rules.
pub fn degeneracies(seed: u64) -> PropertyOutcome {
    let fx = Fixture::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut failures = Vec::new();
    let seeds: Vec<u64> = (0..3).map(|i| seed.wrapping_add(i)).collect();
    for &s in &seeds {
        let c = embedding(&fx.world, normals(&mut rng, fx.world.embedding_dim(), 1.0));
        let reference = bits(&pure_conditional(&fx, &c, s));
        let cases = [
            ("sigma_c=0, tau=0.5", GuidancePolicy::motion_cfg(6.0, 1.0, 0.5, 0.0)),
            ("sigma_c=0, tau=1", GuidancePolicy::motion_cfg(6.0, 6.0, 1.0, 0.0)),
            (
                "sigma_c=0, perturbed rule",
                GuidancePolicy::motion_cfg(1.0, 1.0, 0.5, 0.0).with_rule(MotionRule::Perturbed),
            ),
            ("omega_std=1 standard", GuidancePolicy::standard_cfg(1.0)),
        ];
        for (label, policy) in cases {
            if bits(&final_latent(&fx, &policy, &c, s)) != reference {
                failures.push(format!("{label} differs from pure conditional (seed {s})"));
            }
        }
        let tau0 = final_latent(&fx, &GuidancePolicy::motion_cfg(6.0, 6.0, 0.0, 0.5), &c, s);
        let standard = final_latent(&fx, &GuidancePolicy::standard_cfg(6.0), &c, s);
        if bits(&tau0) != bits(&standard) {
            failures.push(format!("tau=0 differs from StandardCFG (seed {s})"));
        }
    }
    for _ in 0..1000 {
        let a = normals(&mut rng, 72, 3.0);
        let b = normals(&mut rng, 72, 3.0);
        if bits(&cfg_combine(&a, &b, 1.0).expect("combine")) != bits(&b) {
            failures.push("omega_std=1 combine is not eps_cond".into());
            break;
        }
    }
    let groups = [
        vec![Group::Motion],
        vec![Group::Count],
        vec![Group::Content],
        vec![Group::Motion, Group::Count],
    ];
    'outer: for k in 0..200 {
        let c = embedding(&fx.world, normals(&mut rng, fx.world.embedding_dim(), 1.0));
        let targets = groups[k % groups.len()].clone();
        let spec = PerturbationSpec {
            targets: targets.clone(),
            sigma_c: rng.random_range(0.0..=3.0),
            seed: seed.wrapping_add(k as u64),
        };
        let cp = perturb(&c, &spec, k as u64).expect("perturb");
        let layout = fx.world.default_groups();
        let touched: Vec<usize> = targets
            .iter()
            .flat_map(|g| layout.get(*g).unwrap_or(&[]).to_vec())
            .collect();
        for i in 0..c.len() {
            if !touched.contains(&i) && c.values()[i].to_bits() != cp.values()[i].to_bits() {
                failures.push(format!("perturbation of {targets:?} touched index {i}"));
                break 'outer;
            }
        }
    }
    let passed = failures.is_empty();
    let detail = if passed {
        "sigma_c=0, tau=0, omega_std=1 and locality reductions are bit-exact".to_string()
    } else {
        failures.join("; ")
    };
    outcome("degeneracy suite", passed, detail)
}

/// Runs every property with the probe counts used by `mcfg verify`.
pub fn run_all(seed: u64) -> Vec<PropertyOutcome> {
    vec![
        derivation_identity(1000, seed),
        gradient_check(100, seed.wrapping_add(1)),
        loss_identity(100, seed.wrapping_add(2)),
        score_oracle(100, seed.wrapping_add(3)),
        degeneracies(seed.wrapping_add(4)),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_suite_passes() {
        assert!(derivation_identity(50, 9).passed);
        assert!(gradient_check(10, 9).passed);
        assert!(loss_identity(20, 9).passed);
        assert!(score_oracle(10, 9).passed);
    }

    #[test]
    fn rel_err_zero_reference() {
        assert_eq!(rel_err(&[0.0], &[0.0]), 0.0);
        assert_eq!(rel_err(&[1.0, 0.0], &[1.0, 0.0]), 0.0);
    }
}
