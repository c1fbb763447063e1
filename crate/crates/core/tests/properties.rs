//! Property-based checks of the module invariants.

use mcfg::embedding::{perturb, ConditionEmbedding, Group, IndexGroups, PerturbationSpec};
use mcfg::guidance::{cfg_combine, motioncfg_anchored, motioncfg_combine, tweedie, GuidancePolicy};
use mcfg::metrics::{alignment_error, count_objects, toy_flow};
use mcfg::sampler::{phase_of, run, Phase, RunConfig};
use mcfg::schedule::build_linear_schedule;
use mcfg::toymodel::{LatentVideo, WorldModel, WorldParams};
use proptest::collection::vec;
use proptest::prelude::*;

fn emb(values: Vec<f64>) -> ConditionEmbedding {
    ConditionEmbedding::new(values, IndexGroups::slot_layout(3)).unwrap()
}

fn latent(data: Vec<f64>) -> LatentVideo {
    LatentVideo::from_vec(8, 3, data).unwrap()
}

fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    let scale = b.iter().fold(1.0f64, |m, x| m.max(x.abs()));
    a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol * scale)
}

fn group() -> impl Strategy<Value = Group> {
    prop_oneof![Just(Group::Content), Just(Group::Motion), Just(Group::Count)]
}

fn world() -> WorldModel {
    WorldModel::new(&WorldParams::default()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn schedule_invariants(steps in 2usize..300, b0 in 1e-5f64..1e-2, extra in 0.0f64..0.5) {
        let s = build_linear_schedule(steps, b0, b0 + extra).unwrap();
        let mut acc = 1.0;
        for t in 1..=steps {
            let (a, b) = s.signal_coeffs(t).unwrap();
            prop_assert!((a * a + b * b - 1.0).abs() <= 1e-12);
            prop_assert!(s.alpha_bar(t).unwrap() < s.alpha_bar(t - 1).unwrap());
            acc *= 1.0 - s.betas()[t - 1];
            prop_assert_eq!(s.alpha_bar(t).unwrap(), acc);
        }
    }

    #[test]
    fn perturbation_is_local_and_deterministic(
        c in vec(-5.0f64..5.0, 15),
        targets in vec(group(), 1..3),
        sigma in 0.0f64..4.0,
        seed in any::<u64>(),
        nonce in any::<u64>(),
    ) {
        let c = emb(c);
        let spec = PerturbationSpec { targets: targets.clone(), sigma_c: sigma, seed };
        let a = perturb(&c, &spec, nonce).unwrap();
        let b = perturb(&c, &spec, nonce).unwrap();
        prop_assert_eq!(a.values(), b.values());
        let layout = IndexGroups::slot_layout(3);
        for i in 0..15 {
            let touched = targets.iter().any(|g| layout.get(*g).unwrap().contains(&i));
            if !touched {
                prop_assert_eq!(a.values()[i].to_bits(), c.values()[i].to_bits());
            }
        }
    }

    #[test]
    fn tweedie_recovers_mean_without_data_noise(c in vec(-3.0f64..3.0, 15), z in vec(-5.0f64..5.0, 72)) {
        let s = build_linear_schedule(20, 1e-9, 0.02).unwrap();
        assert!(s.alpha_bar(1).unwrap() >= 1.0 - 1e-8);
        let c = emb(c);
        let w = WorldModel::with_prototypes(8, 3, 0.0, vec![vec![0.0; 15]], vec![1.0]).unwrap();
        let z = latent(z);
        let eps = w.eps_conditional(&s, &z, 1, &c).unwrap();
        let x0 = tweedie(z.as_slice(), eps.as_slice(), &s, 1).unwrap();
        let mu = w.mean_latent(&c).unwrap();
        for (a, b) in x0.iter().zip(mu.as_slice()) {
            prop_assert!((a - b).abs() <= 1e-6);
        }
    }

    #[test]
    fn posterior_weights_normalised(z in vec(-1e3f64..1e3, 72), t in 1usize..=50) {
        let s = build_linear_schedule(50, 1e-4, 0.02).unwrap();
        let w = world().posterior_weights(&s, &latent(z.clone()), t).unwrap();
        prop_assert!(w.iter().all(|x| x.is_finite() && *x >= 0.0));
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        let eps = world().eps_unconditional(&s, &latent(z), t).unwrap();
        prop_assert!(eps.is_finite());
    }

    #[test]
    fn eps_conditional_is_affine(
        z1 in vec(-3.0f64..3.0, 72),
        z2 in vec(-3.0f64..3.0, 72),
        c1 in vec(-2.0f64..2.0, 15),
        c2 in vec(-2.0f64..2.0, 15),
        a in -2.0f64..3.0,
        t in 1usize..=50,
    ) {
        let s = build_linear_schedule(50, 1e-4, 0.02).unwrap();
        let w = world();
        let mix = |x: &[f64], y: &[f64]| -> Vec<f64> { x.iter().zip(y).map(|(p, q)| a * p + (1.0 - a) * q).collect() };
        let eps = |z: &[f64], c: &[f64]| w.eps_conditional(&s, &latent(z.to_vec()), t, &emb(c.to_vec())).unwrap().into_vec();
        let lhs = eps(&mix(&z1, &z2), &c1);
        let rhs = mix(&eps(&z1, &c1), &eps(&z2, &c1));
        prop_assert!(close(&lhs, &rhs, 1e-9));
        let lhs = eps(&z1, &mix(&c1, &c2));
        let rhs = mix(&eps(&z1, &c1), &eps(&z1, &c2));
        prop_assert!(close(&lhs, &rhs, 1e-9));
    }

    #[test]
    fn combine_rules_are_affine_per_argument(
        x1 in vec(-5.0f64..5.0, 16),
        x2 in vec(-5.0f64..5.0, 16),
        y in vec(-5.0f64..5.0, 16),
        a in -2.0f64..3.0,
        w in 0.0f64..10.0,
    ) {
        let mix: Vec<f64> = x1.iter().zip(&x2).map(|(p, q)| a * p + (1.0 - a) * q).collect();
        type Rule = fn(&[f64], &[f64], f64) -> mcfg::Result<Vec<f64>>;
        let rules: [Rule; 3] = [cfg_combine, motioncfg_combine, motioncfg_anchored];
        for rule in rules {
            for first in [true, false] {
                let f = |x: &[f64]| if first { rule(x, &y, w).unwrap() } else { rule(&y, x, w).unwrap() };
                let lhs = f(&mix);
                let rhs: Vec<f64> = f(&x1).iter().zip(f(&x2)).map(|(p, q)| a * p + (1.0 - a) * q).collect();
                prop_assert!(close(&lhs, &rhs, 1e-9));
            }
        }
    }

    #[test]
    fn combine_degeneracies(e in vec(-5.0f64..5.0, 16), other in vec(-5.0f64..5.0, 16), w in 0.0f64..10.0) {
        prop_assert_eq!(motioncfg_anchored(&e, &e, w).unwrap(), e.clone());
        prop_assert_eq!(motioncfg_combine(&e, &e, w).unwrap(), e.clone());
        prop_assert_eq!(cfg_combine(&other, &e, 1.0).unwrap(), e.clone());
        prop_assert_eq!(motioncfg_anchored(&e, &other, 0.0).unwrap(), e.clone());
    }

    #[test]
    fn phases_partition_in_order(steps in 2usize..200, tau in 0.0f64..=1.0, delay in 0usize..20) {
        let seq: Vec<Phase> = (1..=steps).rev().map(|t| phase_of(t, steps, tau, delay)).collect();
        let rank = |p: &Phase| match p { Phase::Delayed => 0, Phase::Motion => 1, Phase::Refine => 2 };
        prop_assert!(seq.windows(2).all(|w| rank(&w[0]) <= rank(&w[1])));
        prop_assert_eq!(seq.iter().filter(|p| **p == Phase::Delayed).count(), delay.min(steps));
    }

    #[test]
    fn flow_translation_and_scaling(
        c in vec(-2.0f64..2.0, 15),
        shift in (-5.0f64..5.0, -5.0f64..5.0),
        k in 0.0f64..4.0,
    ) {
        let w = world();
        let mut c = c;
        for p in &mut c[12..] { *p = p.abs().min(1.0); }
        let base = toy_flow(&w.mean_latent(&emb(c.clone())).unwrap()).unwrap();
        let mut moved = c.clone();
        for s in 0..3 { moved[2 * s] += shift.0; moved[2 * s + 1] += shift.1; }
        let shifted = toy_flow(&w.mean_latent(&emb(moved)).unwrap()).unwrap();
        prop_assert!((shifted - base).abs() <= 1e-9 * base.max(1.0));
        let mut scaled = c.clone();
        for v in &mut scaled[6..12] { *v *= k; }
        let sflow = toy_flow(&w.mean_latent(&emb(scaled)).unwrap()).unwrap();
        prop_assert!((sflow - k * base).abs() <= 1e-9 * (k * base).max(1.0));
    }

    #[test]
    fn alignment_zero_on_mean(c in vec(-3.0f64..3.0, 15)) {
        let c = emb(c);
        let v = world().mean_latent(&c).unwrap();
        prop_assert!(alignment_error(&v, &c).unwrap() <= 1e-10);
    }

    #[test]
    fn count_monotone_in_threshold(z in vec(-1.0f64..2.0, 72), a in 0.01f64..0.99, b in 0.01f64..0.99) {
        let v = latent(z);
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(count_objects(&v, lo).unwrap() >= count_objects(&v, hi).unwrap());
    }

    #[test]
    fn sampler_is_deterministic(seed in any::<u64>(), tau in 0.0f64..=1.0, sigma in 0.0f64..1.0) {
        let s = build_linear_schedule(12, 1e-4, 0.02).unwrap();
        let w = world();
        let c = emb((0..15).map(|i| (i as f64).cos()).collect());
        let p = GuidancePolicy::motion_cfg(6.0, 6.0, tau, sigma);
        let cfg = RunConfig { policy: &p, schedule: &s, world: &w, condition: &c, seed, record_trajectory: true };
        let a = run(&cfg).unwrap();
        let b = run(&cfg).unwrap();
        prop_assert_eq!(a, b);
    }
}

#[test]
fn fresh_draws_per_nonce_are_uncorrelated() {
    let c = emb(vec![0.0; 15]);
    let spec = PerturbationSpec::new(Group::Motion, 1.0, 42);
    let n = 4000;
    let draws: Vec<f64> = (0..=n).map(|k| perturb(&c, &spec, k).unwrap().values()[7]).collect();
    let (x, y) = (&draws[..n as usize], &draws[1..]);
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (mx, my) = (mean(x), mean(y));
    let cov: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    let rho = cov / (vx * vy).sqrt();
    assert!(rho.abs() < 4.0 / (n as f64).sqrt(), "rho {rho}");
}

#[test]
fn single_gaussian_long_schedule_converges() {
    let s = build_linear_schedule(200, 1e-4, 0.02).unwrap();
    let c = emb((0..15).map(|i| 0.3 * (i as f64).sin()).collect());
    let w = WorldModel::with_prototypes(8, 3, 0.0, vec![c.values().to_vec()], vec![1.0]).unwrap();
    let p = GuidancePolicy::standard_cfg(1.0);
    for seed in 0..5 {
        let r = run(&RunConfig {
            policy: &p,
            schedule: &s,
            world: &w,
            condition: &c,
            seed,
            record_trajectory: false,
        })
        .unwrap();
        let mu = w.mean_latent(&c).unwrap();
        for (a, b) in r.final_latent.as_slice().iter().zip(mu.as_slice()) {
            assert!((a - b).abs() <= 1e-3);
        }
    }
}

#[test]
fn motion_steps_use_distinct_draws() {
    let c = emb(vec![0.1; 15]);
    let spec = PerturbationSpec::new(Group::Motion, 0.5, 7);
    let motion_steps: Vec<usize> = (1..=20)
        .rev()
        .filter(|&t| phase_of(t, 20, 0.5, 0) == Phase::Motion)
        .collect();
    assert_eq!(motion_steps.len(), 10);
    let draws: Vec<Vec<f64>> = motion_steps
        .iter()
        .map(|&t| perturb(&c, &spec, t as u64).unwrap().values().to_vec())
        .collect();
    for i in 0..draws.len() {
        for j in i + 1..draws.len() {
            assert_ne!(draws[i], draws[j]);
        }
    }
}
