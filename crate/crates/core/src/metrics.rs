//! Dynamics, alignment and counting measures on toy latents.

use crate::embedding::ConditionEmbedding;
use crate::error::{Error, Result};
use crate::toymodel::{LatentVideo, PRESENCE, X, Y};

pub const DEFAULT_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsReport {
    pub flow: f64,
    pub structural_var: f64,
    pub align_err: f64,
    pub count_pred: usize,
    pub count_true: usize,
}

impl MetricsReport {
    pub fn count_err(&self) -> usize {
        self.count_pred.abs_diff(self.count_true)
    }
}

fn need_frames(v: &LatentVideo) -> Result<()> {
    if v.frames() < 2 {
        return Err(Error::DegenerateFit(format!(
            "need at least 2 frames, got {}",
            v.frames()
        )));
    }
    Ok(())
}

fn mean_presence(v: &LatentVideo, slot: usize) -> f64 {
    (0..v.frames()).map(|f| v.get(f, slot, PRESENCE)).sum::<f64>() / v.frames() as f64
}

/// Presence-weighted mean per-frame displacement.
///
/// Each slot's mean step length over frames is weighted by its mean
/// presence clipped to `[0, 1]`; a video with no present slot has zero
/// flow.
pub fn toy_flow(v: &LatentVideo) -> Result<f64> {
    need_frames(v)?;
    let mut num = 0.0;
    let mut den = 0.0;
    for m in 0..v.slots() {
        let w = mean_presence(v, m).clamp(0.0, 1.0);
        if w == 0.0 {
            continue;
        }
        let steps: f64 = (1..v.frames())
            .map(|f| {
                let dx = v.get(f, m, X) - v.get(f - 1, m, X);
                let dy = v.get(f, m, Y) - v.get(f - 1, m, Y);
                dx.hypot(dy)
            })
            .sum();
        num += w * steps / (v.frames() - 1) as f64;
        den += w;
    }
    Ok(if den > 0.0 { num / den } else { 0.0 })
}

/// Mean over adjacent frame pairs of the mean squared channel difference.
pub fn structural_variation(v: &LatentVideo) -> Result<f64> {
    need_frames(v)?;
    let pairs = v.frames() - 1;
    let total: f64 = (1..v.frames())
        .map(|f| {
            let (a, b) = (v.frame(f - 1), v.frame(f));
            a.iter().zip(b).map(|(x, y)| (y - x).powi(2)).sum::<f64>() / a.len() as f64
        })
        .sum();
    Ok(total / pairs as f64)
}

/// Least-squares line `a + b f` through `ys` at `f = 0..n`.
fn fit_line(ys: &[f64]) -> (f64, f64) {
    let n = ys.len() as f64;
    let fbar = (n - 1.0) / 2.0;
    let ybar = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (f, y) in ys.iter().enumerate() {
        let d = f as f64 - fbar;
        sxy += d * (y - ybar);
        sxx += d * d;
    }
    let slope = sxy / sxx;
    (ybar - slope * fbar, slope)
}

/// Distance between each slot's fitted `(x0, y0, vx, vy)` and the
/// conditioned position and velocity, averaged with the conditioned
/// presence (clipped to `[0, 1]`) as weights. Falls back to a plain mean
/// when no slot is conditioned present.
pub fn alignment_error(v: &LatentVideo, c: &ConditionEmbedding) -> Result<f64> {
    need_frames(v)?;
    let m = v.slots();
    if c.len() != 5 * m {
        return Err(Error::DimensionMismatch {
            expected: 5 * m,
            got: c.len(),
        });
    }
    let cv = c.values();
    let mut errs = Vec::with_capacity(m);
    let mut weights = Vec::with_capacity(m);
    for s in 0..m {
        let xs: Vec<f64> = (0..v.frames()).map(|f| v.get(f, s, X)).collect();
        let ys: Vec<f64> = (0..v.frames()).map(|f| v.get(f, s, Y)).collect();
        let (x0, vx) = fit_line(&xs);
        let (y0, vy) = fit_line(&ys);
        let d = [
            x0 - cv[2 * s],
            y0 - cv[2 * s + 1],
            vx - cv[2 * m + 2 * s],
            vy - cv[2 * m + 2 * s + 1],
        ];
        errs.push(d.iter().map(|x| x * x).sum::<f64>().sqrt());
        weights.push(cv[4 * m + s].clamp(0.0, 1.0));
    }
    let wsum: f64 = weights.iter().sum();
    Ok(if wsum > 0.0 {
        errs.iter().zip(&weights).map(|(e, w)| e * w).sum::<f64>() / wsum
    } else {
        errs.iter().sum::<f64>() / m as f64
    })
}

fn check_threshold(threshold: f64) -> Result<()> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::InvalidRange {
            what: "threshold",
            detail: format!("must lie in (0, 1), got {threshold}"),
        });
    }
    Ok(())
}

/// Slots whose time-mean presence is strictly above `threshold`.
pub fn count_objects(v: &LatentVideo, threshold: f64) -> Result<usize> {
    check_threshold(threshold)?;
    Ok((0..v.slots()).filter(|&m| mean_presence(v, m) > threshold).count())
}

/// Number of slots a condition asks to be present.
pub fn requested_count(c: &ConditionEmbedding, slots: usize, threshold: f64) -> Result<usize> {
    check_threshold(threshold)?;
    if c.len() != 5 * slots {
        return Err(Error::DimensionMismatch {
            expected: 5 * slots,
            got: c.len(),
        });
    }
    Ok(c.values()[4 * slots..].iter().filter(|p| **p > threshold).count())
}

/// `(MAE, RMSE)` between predicted and true counts.
pub fn aggregate_count_errors(preds: &[usize], truths: &[usize]) -> Result<(f64, f64)> {
    if preds.len() != truths.len() {
        return Err(Error::LengthMismatch {
            left: preds.len(),
            right: truths.len(),
        });
    }
    if preds.is_empty() {
        return Err(Error::Empty("count lists"));
    }
    let n = preds.len() as f64;
    let (abs, sq) = preds.iter().zip(truths).fold((0.0, 0.0), |(a, s), (p, t)| {
        let d = *p as f64 - *t as f64;
        (a + d.abs(), s + d * d)
    });
    Ok((abs / n, (sq / n).sqrt()))
}

pub fn evaluate(v: &LatentVideo, c: &ConditionEmbedding, threshold: f64) -> Result<MetricsReport> {
    Ok(MetricsReport {
        flow: toy_flow(v)?,
        structural_var: structural_variation(v)?,
        align_err: alignment_error(v, c)?,
        count_pred: count_objects(v, threshold)?,
        count_true: requested_count(c, v.slots(), threshold)?,
    })
}
