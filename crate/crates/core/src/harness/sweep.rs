//! Seed-paired sweeps over policy grids.

use rayon::prelude::*;

use super::manifest::{Scenario, ScenarioManifest};
use crate::error::{Error, Result};
use crate::metrics::{aggregate_count_errors, evaluate, MetricsReport};
use crate::sampler::{run, RunConfig};
use crate::stats::{mean, std_err};

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub policy: String,
    pub policy_index: usize,
    pub grid_index: usize,
    pub omega: f64,
    pub omega_std: f64,
    pub tau: f64,
    pub sigma_c: f64,
    pub seed: u64,
    pub metrics: MetricsReport,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanSe {
    pub mean: f64,
    pub se: f64,
}

impl MeanSe {
    pub fn of(xs: &[f64]) -> Self {
        Self {
            mean: mean(xs),
            se: std_err(xs),
        }
    }
}

/// Aggregate over the seeds of one grid point.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub policy: String,
    pub policy_index: usize,
    pub grid_index: usize,
    pub omega: f64,
    pub omega_std: f64,
    pub tau: f64,
    pub sigma_c: f64,
    pub n: usize,
    pub flow: MeanSe,
    pub structural_var: MeanSe,
    pub align_err: MeanSe,
    pub count_pred: MeanSe,
    /// Absolute count error; its mean is the MAE.
    pub count_err: MeanSe,
    pub count_rmse: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    /// Ordered by policy index, then grid index, then seed.
    pub rows: Vec<SweepRow>,
    pub summary: Vec<SummaryRow>,
}

impl SweepResult {
    /// Rows of one grid point, in seed order.
    pub fn cell(&self, policy_index: usize, grid_index: usize) -> Vec<&SweepRow> {
        self.rows
            .iter()
            .filter(|r| r.policy_index == policy_index && r.grid_index == grid_index)
            .collect()
    }

    pub fn rows_for(&self, policy: &str) -> Vec<&SweepRow> {
        self.rows.iter().filter(|r| r.policy == policy).collect()
    }
}

struct Cell {
    policy_index: usize,
    grid_index: usize,
    seed_index: usize,
}

fn run_cell(s: &Scenario, cell: &Cell) -> Result<SweepRow> {
    let grid = &s.policies[cell.policy_index];
    let point = &grid.points[cell.grid_index];
    let seed = s.seeds[cell.seed_index];
    let condition = s.condition_for(cell.seed_index);
    let annotate = |e: Error| Error::Run {
        policy: grid.id.clone(),
        seed,
        source: Box::new(e),
    };
    let mut policy = point.policy.clone();
    policy.anchor = s.resolve_anchor(&point.anchor, condition).map_err(annotate)?;
    let result = run(&RunConfig {
        policy: &policy,
        schedule: &s.schedule,
        world: &s.world,
        condition,
        seed,
        record_trajectory: false,
    })
    .map_err(annotate)?;
    let metrics = evaluate(&result.final_latent, condition, s.threshold).map_err(annotate)?;
    Ok(SweepRow {
        policy: grid.id.clone(),
        policy_index: cell.policy_index,
        grid_index: cell.grid_index,
        omega: policy.omega,
        omega_std: policy.omega_std,
        tau: policy.tau,
        sigma_c: policy.sigma_c,
        seed,
        metrics,
    })
}

/// Runs every (policy, grid point, seed) cell on the current rayon pool.
pub fn run_sweep(m: &ScenarioManifest) -> Result<SweepResult> {
    run_scenario(&m.resolve()?)
}

/// Like [`run_sweep`] on a dedicated pool of `jobs` threads.
pub fn run_sweep_with_jobs(m: &ScenarioManifest, jobs: usize) -> Result<SweepResult> {
    let scenario = m.resolve()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::validation("jobs", e.to_string()))?;
    pool.install(|| run_scenario(&scenario))
}

pub fn run_scenario(s: &Scenario) -> Result<SweepResult> {
    let mut cells = Vec::new();
    for (pi, grid) in s.policies.iter().enumerate() {
        for gi in 0..grid.points.len() {
            for si in 0..s.seeds.len() {
                cells.push(Cell {
                    policy_index: pi,
                    grid_index: gi,
                    seed_index: si,
                });
            }
        }
    }
    let results: Vec<Result<SweepRow>> = cells.par_iter().map(|c| run_cell(s, c)).collect();
    // Report the first failure in row order regardless of scheduling.
    let rows = results.into_iter().collect::<Result<Vec<_>>>()?;
    let summary = summarize(&rows);
    Ok(SweepResult { rows, summary })
}

/// Groups consecutive rows by grid point.
pub fn summarize(rows: &[SweepRow]) -> Vec<SummaryRow> {
    let mut out = Vec::new();
    let mut start = 0;
    while start < rows.len() {
        let key = (rows[start].policy_index, rows[start].grid_index);
        let end = start
            + rows[start..]
                .iter()
                .take_while(|r| (r.policy_index, r.grid_index) == key)
                .count();
        out.push(summarize_cell(&rows[start..end]));
        start = end;
    }
    out
}

fn summarize_cell(rows: &[SweepRow]) -> SummaryRow {
    let col = |f: fn(&MetricsReport) -> f64| -> Vec<f64> { rows.iter().map(|r| f(&r.metrics)).collect() };
    let preds: Vec<usize> = rows.iter().map(|r| r.metrics.count_pred).collect();
    let truths: Vec<usize> = rows.iter().map(|r| r.metrics.count_true).collect();
    let (_, rmse) = aggregate_count_errors(&preds, &truths).expect("non-empty, equal lengths");
    let first = &rows[0];
    SummaryRow {
        policy: first.policy.clone(),
        policy_index: first.policy_index,
        grid_index: first.grid_index,
        omega: first.omega,
        omega_std: first.omega_std,
        tau: first.tau,
        sigma_c: first.sigma_c,
        n: rows.len(),
        flow: MeanSe::of(&col(|m| m.flow)),
        structural_var: MeanSe::of(&col(|m| m.structural_var)),
        align_err: MeanSe::of(&col(|m| m.align_err)),
        count_pred: MeanSe::of(&col(|m| m.count_pred as f64)),
        count_err: MeanSe::of(&col(|m| m.count_err() as f64)),
        count_rmse: rmse,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn manifest(v: serde_json::Value) -> ScenarioManifest {
        ScenarioManifest::from_value(v).unwrap()
    }

    #[test]
    fn cardinality_and_order() {
        let m = manifest(json!({
            "schedule": {"steps": 10},
            "policies": [{"kind": "StandardCFG"}, {"kind": "MotionCFG", "tau": [0.1, 0.5]}],
            "seeds": {"count": 3, "base": 5}
        }));
        let r = run_sweep(&m).unwrap();
        assert_eq!(r.rows.len(), 9);
        let keys: Vec<_> = r.rows.iter().map(|r| (r.policy_index, r.grid_index, r.seed)).collect();
        let mut sorted = keys.clone();
        sorted.sort();
        assert_eq!(keys, sorted);
        assert_eq!(r.rows[0].seed, 5);
        assert_eq!(r.summary.len(), 3);
        assert_eq!(r.summary[2].tau, 0.5);
    }

    #[test]
    fn jobs_do_not_change_results() {
        let m = manifest(json!({
            "schedule": {"steps": 8},
            "policies": [{"kind": "MotionCFG", "sigma_c": [0.1, 0.5]}, {"kind": "CADS"}],
            "seeds": {"count": 4}
        }));
        assert_eq!(run_sweep_with_jobs(&m, 1).unwrap(), run_sweep_with_jobs(&m, 3).unwrap());
    }

    #[test]
    fn summary_matches_rows() {
        let m = manifest(json!({
            "schedule": {"steps": 8},
            "policies": [{"kind": "NegPromptCFG"}],
            "seeds": {"count": 5}
        }));
        let r = run_sweep(&m).unwrap();
        let flows: Vec<f64> = r.rows.iter().map(|r| r.metrics.flow).collect();
        assert!((r.summary[0].flow.mean - flows.iter().sum::<f64>() / 5.0).abs() < 1e-12);
        assert_eq!(r.summary[0].n, 5);
    }
}
