//! Scenario manifests, seed-paired sweeps, CSV/SVG output and the CLI.

pub mod cli;
pub mod manifest;
pub mod output;
pub mod scenarios;
pub mod sweep;

pub use cli::cli_main;
pub use manifest::{apply_override, load_manifest, load_manifest_with_overrides, ScenarioManifest};
pub use output::{chart_svg, csv_string, format_sig, write_chart, write_csv, CSV_HEADER};
pub use sweep::{run_sweep, run_sweep_with_jobs, SummaryRow, SweepResult, SweepRow};
