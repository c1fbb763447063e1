//! Command-line front end: `run`, `verify` and `demo`.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use super::manifest::{load_manifest_with_overrides, Format, ScenarioManifest};
use super::output::{write_chart, write_csv, ChartX};
use super::scenarios;
use super::sweep::{run_sweep, run_sweep_with_jobs, SweepResult};
use crate::error::{Error, Result};
use crate::guidance::GuidanceKind;
use crate::stats::mean;
use crate::verify;

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "MCFG_OUT_DIR";
pub const FALLBACK_OUT_DIR: &str = "mcfg-out";

#[derive(Debug, Parser)]
#[command(name = "mcfg", version, about = "Guidance sweeps on an analytic toy video world")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the sweep described by a manifest and write CSV and charts.
    Run {
        manifest: PathBuf,
        /// Override the manifest's seed count.
        #[arg(long)]
        seeds: Option<usize>,
        /// Output directory (default: manifest `outputs.dir`, then $MCFG_OUT_DIR, then ./mcfg-out).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Dotted-path manifest override, e.g. `policies.0.tau=[0.1,0.2]`.
        #[arg(long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        /// Worker threads.
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Check the guidance identities, gradients and score oracles.
    Verify {
        /// Seed for the random probes.
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run the built-in motion and counting scenarios.
    Demo {
        #[arg(long, default_value_t = scenarios::DEMO_SEEDS)]
        seeds: usize,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        jobs: Option<usize>,
    },
}

/// Parses `args` (including the program name) and runs the command.
pub fn cli_main<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    cli_main_with(args, &mut stdout.lock(), &mut stderr.lock())
}

pub fn cli_main_with<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let text = e.render().to_string();
            let _ = if e.use_stderr() {
                write!(err, "{text}")
            } else {
                write!(out, "{text}")
            };
            return code;
        }
    };
    let result = match cli.command {
        Command::Run {
            manifest,
            seeds,
            out: out_dir,
            overrides,
            jobs,
        } => cmd_run(&manifest, seeds, out_dir, &overrides, jobs, out),
        Command::Verify { seed } => cmd_verify(seed, out),
        Command::Demo {
            seeds,
            out: out_dir,
            jobs,
        } => cmd_demo(seeds, out_dir, jobs, out),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            let _ = write!(err, "error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                let _ = write!(err, ": {s}");
                source = s.source();
            }
            let _ = writeln!(err);
            1
        }
    }
}

fn default_out_dir(manifest_dir: Option<&str>) -> PathBuf {
    if let Some(d) = manifest_dir {
        return PathBuf::from(d);
    }
    std::env::var_os(OUT_DIR_ENV)
        .filter(|v| !v.is_empty())
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(FALLBACK_OUT_DIR))
}

fn sweep(m: &ScenarioManifest, jobs: Option<usize>) -> Result<SweepResult> {
    match jobs {
        Some(j) => run_sweep_with_jobs(m, j),
        None => run_sweep(m),
    }
}

/// Writes the CSV and charts a manifest asks for; returns written paths.
pub fn write_outputs(m: &ScenarioManifest, r: &SweepResult, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    if m.outputs.formats.contains(&Format::Csv) {
        let p = dir.join("results.csv");
        write_csv(r, &p)?;
        written.push(p);
    }
    if m.outputs.formats.contains(&Format::Svg) {
        let charts: Vec<(String, String)> = if m.outputs.charts.is_empty() {
            swept_axes(r)
                .into_iter()
                .flat_map(|x| [(x.into(), "flow".into()), (x.into(), "align_err".into())])
                .collect()
        } else {
            m.outputs.charts.iter().map(|c| (c.x.clone(), c.y.clone())).collect()
        };
        for (x, y) in charts {
            let p = dir.join(format!("{y}_vs_{x}.svg"));
            write_chart(r, &x, &y, &p)?;
            written.push(p);
        }
    }
    Ok(written)
}

fn swept_axes(r: &SweepResult) -> Vec<&'static str> {
    ChartX::ALL
        .into_iter()
        .filter(|a| {
            let first = r.summary.first().map(|s| a.value(s));
            r.summary.iter().any(|s| Some(a.value(s)) != first)
        })
        .map(ChartX::name)
        .collect()
}

fn print_summary(r: &SweepResult, out: &mut dyn Write) {
    let _ = writeln!(
        out,
        "{:<18} {:>6} {:>9} {:>5} {:>7} {:>5}  {:>20}  {:>20}  {:>8} {:>8}",
        "policy",
        "omega",
        "omega_std",
        "tau",
        "sigma_c",
        "n",
        "flow (mean+-se)",
        "align_err (mean+-se)",
        "cnt MAE",
        "cnt RMSE"
    );
    for s in &r.summary {
        let _ = writeln!(
            out,
            "{:<18} {:>6} {:>9} {:>5} {:>7} {:>5}  {:>11.5}+-{:<7.5}  {:>11.5}+-{:<7.5}  {:>8.4} {:>8.4}",
            s.policy,
            s.omega,
            s.omega_std,
            s.tau,
            s.sigma_c,
            s.n,
            s.flow.mean,
            s.flow.se,
            s.align_err.mean,
            s.align_err.se,
            s.count_err.mean,
            s.count_rmse
        );
    }
}

fn cmd_run(
    path: &Path,
    seeds: Option<usize>,
    out_dir: Option<PathBuf>,
    overrides: &[String],
    jobs: Option<usize>,
    out: &mut dyn Write,
) -> Result<i32> {
    let mut all = overrides.to_vec();
    if let Some(n) = seeds {
        all.push(format!("seeds.count={n}"));
    }
    let m = load_manifest_with_overrides(path, &all)?;
    let r = sweep(&m, jobs)?;
    let dir = out_dir.unwrap_or_else(|| default_out_dir(m.outputs.dir.as_deref()));
    print_summary(&r, out);
    for p in write_outputs(&m, &r, &dir)? {
        let _ = writeln!(out, "wrote {}", p.display());
    }
    Ok(0)
}

fn cmd_verify(seed: u64, out: &mut dyn Write) -> Result<i32> {
    let outcomes = verify::run_all(seed);
    for o in &outcomes {
        let _ = writeln!(
            out,
            "{} {}: {}",
            if o.passed { "pass" } else { "FAIL" },
            o.name,
            o.detail
        );
    }
    let failed = outcomes.iter().filter(|o| !o.passed).count();
    let _ = writeln!(
        out,
        "{} of {} properties passed",
        outcomes.len() - failed,
        outcomes.len()
    );
    Ok(if failed == 0 { 0 } else { 1 })
}

fn mean_flow(r: &SweepResult, pred: impl Fn(&str) -> bool) -> f64 {
    let flows: Vec<f64> = r
        .rows
        .iter()
        .filter(|row| pred(&row.policy))
        .map(|row| row.metrics.flow)
        .collect();
    mean(&flows)
}

fn cmd_demo(seeds: usize, out_dir: Option<PathBuf>, jobs: Option<usize>, out: &mut dyn Write) -> Result<i32> {
    let root = out_dir.unwrap_or_else(|| default_out_dir(None));

    let motion = scenarios::motion(seeds);
    let r = sweep(&motion, jobs)?;
    let _ = writeln!(out, "== motion scenario ({seeds} seeds) ==");
    print_summary(&r, out);
    let motion_ids: Vec<String> = motion
        .policies
        .iter()
        .filter(|p| p.kind == GuidanceKind::MotionCfg)
        .filter_map(|p| p.id.clone())
        .collect();
    let guided = mean_flow(&r, |p| motion_ids.iter().any(|id| id == p));
    let baseline = mean_flow(&r, |p| p == "Baseline");
    let _ = writeln!(
        out,
        "MotionCFG mean flow {guided:.6} vs Baseline {baseline:.6}: {}",
        if guided > baseline { "higher" } else { "NOT higher" }
    );
    for p in write_outputs(&motion, &r, &root.join("motion"))? {
        let _ = writeln!(out, "wrote {}", p.display());
    }

    let counting = scenarios::counting(seeds);
    let r = sweep(&counting, jobs)?;
    let _ = writeln!(out, "== counting scenario ({seeds} seeds) ==");
    print_summary(&r, out);
    for p in write_outputs(&counting, &r, &root.join("counting"))? {
        let _ = writeln!(out, "wrote {}", p.display());
    }
    Ok(0)
}
