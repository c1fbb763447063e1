//! Summary statistics and paired one-sided tests for seed-paired sweeps.

use statrs::distribution::{ContinuousCDF, StudentsT};
use statrs::function::factorial::ln_binomial;

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Standard error of the mean (sample standard deviation over `sqrt(n)`).
/// Zero for fewer than two samples.
pub fn std_err(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 2 {
        return 0.0;
    }
    let m = mean(xs);
    let var = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1) as f64;
    (var / n as f64).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SignTest {
    /// Pairs with `a > b`.
    pub wins: usize,
    /// Pairs with `a != b`.
    pub trials: usize,
    pub p_value: f64,
}

/// One-sided sign test of `a > b` over paired samples; ties are dropped.
pub fn sign_test_greater(a: &[f64], b: &[f64]) -> SignTest {
    assert_eq!(a.len(), b.len(), "paired samples must have equal length");
    let wins = a.iter().zip(b).filter(|(x, y)| x > y).count();
    let trials = a.iter().zip(b).filter(|(x, y)| x != y).count();
    SignTest {
        wins,
        trials,
        p_value: binomial_upper_tail(trials as u64, wins as u64),
    }
}

/// `P(X >= k)` for `X ~ Binomial(n, 1/2)`.
fn binomial_upper_tail(n: u64, k: u64) -> f64 {
    if k == 0 {
        return 1.0;
    }
    let ln_half_n = n as f64 * 0.5f64.ln();
    let terms: Vec<f64> = (k..=n).map(|i| ln_binomial(n, i) + ln_half_n).collect();
    let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return 0.0;
    }
    (max + terms.iter().map(|t| (t - max).exp()).sum::<f64>().ln())
        .exp()
        .min(1.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairedT {
    pub mean_diff: f64,
    pub t_stat: f64,
    pub p_value: f64,
}

/// One-sided paired t-test of `mean(a - b) > 0`.
pub fn paired_t_greater(a: &[f64], b: &[f64]) -> PairedT {
    assert_eq!(a.len(), b.len(), "paired samples must have equal length");
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let n = d.len();
    let m = mean(&d);
    let se = std_err(&d);
    if n < 2 || se == 0.0 {
        let p = if m > 0.0 { 0.0 } else { 1.0 };
        let t = if m > 0.0 { f64::INFINITY } else { f64::NEG_INFINITY };
        return PairedT {
            mean_diff: m,
            t_stat: t,
            p_value: p,
        };
    }
    let t = m / se;
    let dist = StudentsT::new(0.0, 1.0, (n - 1) as f64).expect("df >= 1");
    PairedT {
        mean_diff: m,
        t_stat: t,
        p_value: dist.sf(t),
    }
}
