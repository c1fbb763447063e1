//! CSV and SVG emission for sweep results.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::sweep::{MeanSe, SummaryRow, SweepResult};
use crate::error::{Error, Result};

pub const CSV_HEADER: [&str; 11] = [
    "policy",
    "omega",
    "omega_std",
    "tau",
    "sigma_c",
    "seed",
    "flow",
    "structural_var",
    "align_err",
    "count_pred",
    "count_true",
];

/// Renders `x` like C's `%.{sig}g`.
pub fn format_sig(x: f64, sig: usize) -> String {
    let sig = sig.max(1);
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return if x.is_sign_negative() { "-0".into() } else { "0".into() };
    }
    let sci = format!("{:.*e}", sig - 1, x);
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if exp < -4 || exp >= sig as i32 {
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{}e{sign}{:02}", trim_zeros(mantissa), exp.abs())
    } else {
        let decimals = (sig as i32 - 1 - exp).max(0) as usize;
        trim_zeros(&format!("{x:.decimals$}")).to_string()
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

fn g6(x: f64) -> String {
    format_sig(x, 6)
}

/// The CSV document for a sweep.
pub fn csv_string(r: &SweepResult) -> Result<String> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    let csv_err = |e: csv::Error| Error::Parse {
        path: "<csv>".into(),
        message: e.to_string(),
    };
    w.write_record(CSV_HEADER).map_err(csv_err)?;
    for row in &r.rows {
        let m = &row.metrics;
        w.write_record([
            row.policy.clone(),
            g6(row.omega),
            g6(row.omega_std),
            g6(row.tau),
            g6(row.sigma_c),
            row.seed.to_string(),
            g6(m.flow),
            g6(m.structural_var),
            g6(m.align_err),
            m.count_pred.to_string(),
            m.count_true.to_string(),
        ])
        .map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Parse {
        path: "<csv>".into(),
        message: e.to_string(),
    })?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn write_csv(r: &SweepResult, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, csv_string(r)?).map_err(|e| Error::io(path, e))
}

/// Hyperparameter axes a chart can use.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChartX {
    Omega,
    OmegaStd,
    Tau,
    SigmaC,
}

impl ChartX {
    pub const ALL: [ChartX; 4] = [ChartX::Omega, ChartX::OmegaStd, ChartX::Tau, ChartX::SigmaC];

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::UnknownAxis(s.to_string()))
    }

    pub fn name(self) -> &'static str {
        match self {
            ChartX::Omega => "omega",
            ChartX::OmegaStd => "omega_std",
            ChartX::Tau => "tau",
            ChartX::SigmaC => "sigma_c",
        }
    }

    pub fn value(self, s: &SummaryRow) -> f64 {
        match self {
            ChartX::Omega => s.omega,
            ChartX::OmegaStd => s.omega_std,
            ChartX::Tau => s.tau,
            ChartX::SigmaC => s.sigma_c,
        }
    }
}

/// Metrics a chart can plot.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChartY {
    Flow,
    StructuralVar,
    AlignErr,
    CountPred,
    CountErr,
}

impl ChartY {
    pub const ALL: [ChartY; 5] = [
        ChartY::Flow,
        ChartY::StructuralVar,
        ChartY::AlignErr,
        ChartY::CountPred,
        ChartY::CountErr,
    ];

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::UnknownAxis(s.to_string()))
    }

    pub fn name(self) -> &'static str {
        match self {
            ChartY::Flow => "flow",
            ChartY::StructuralVar => "structural_var",
            ChartY::AlignErr => "align_err",
            ChartY::CountPred => "count_pred",
            ChartY::CountErr => "count_err",
        }
    }

    pub fn value(self, s: &SummaryRow) -> MeanSe {
        match self {
            ChartY::Flow => s.flow,
            ChartY::StructuralVar => s.structural_var,
            ChartY::AlignErr => s.align_err,
            ChartY::CountPred => s.count_pred,
            ChartY::CountErr => s.count_err,
        }
    }
}

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];
const WIDTH: f64 = 760.0;
const HEIGHT: f64 = 440.0;
const LEFT: f64 = 80.0;
const RIGHT: f64 = 200.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 60.0;

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

fn padded_range(lo: f64, hi: f64) -> (f64, f64) {
    if !(lo.is_finite() && hi.is_finite()) {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 * lo.abs().max(hi.abs()).max(1e-300) {
        let pad = if lo == 0.0 { 0.5 } else { lo.abs() * 0.1 };
        return (lo - pad, hi + pad);
    }
    let pad = (hi - lo) * 0.05;
    (lo - pad, hi + pad)
}

struct Series {
    name: String,
    points: Vec<(f64, MeanSe)>,
}

/// SVG document plotting per-policy mean +- standard error of `y` against `x`.
pub fn chart_svg(r: &SweepResult, x_axis: &str, y_axis: &str) -> Result<String> {
    let xa = ChartX::parse(x_axis)?;
    let ya = ChartY::parse(y_axis)?;

    let mut series: Vec<Series> = Vec::new();
    for s in &r.summary {
        let point = (xa.value(s), ya.value(s));
        match series.iter_mut().find(|se| se.name == s.policy) {
            Some(se) => se.points.push(point),
            None => series.push(Series {
                name: s.policy.clone(),
                points: vec![point],
            }),
        }
    }
    for s in &mut series {
        s.points.sort_by(|a, b| a.0.total_cmp(&b.0));
    }

    let all = series.iter().flat_map(|s| s.points.iter());
    let (mut x_lo, mut x_hi, mut y_lo, mut y_hi) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for (x, m) in all {
        x_lo = x_lo.min(*x);
        x_hi = x_hi.max(*x);
        y_lo = y_lo.min(m.mean - m.se);
        y_hi = y_hi.max(m.mean + m.se);
    }
    let (x_lo, x_hi) = padded_range(x_lo, x_hi);
    let (y_lo, y_hi) = padded_range(y_lo, y_hi);
    let plot_w = WIDTH - LEFT - RIGHT;
    let plot_h = HEIGHT - TOP - BOTTOM;
    let px = |x: f64| LEFT + (x - x_lo) / (x_hi - x_lo) * plot_w;
    let py = |y: f64| TOP + (1.0 - (y - y_lo) / (y_hi - y_lo)) * plot_h;

    let mut svg = String::new();
    let w = &mut svg;
    let _ = writeln!(
        w,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(
        w,
        r#"<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#
    );
    let _ = writeln!(
        w,
        r#"<text x="{:.1}" y="22" text-anchor="middle" font-size="14">{} vs {}</text>"#,
        LEFT + plot_w / 2.0,
        ya.name(),
        xa.name()
    );
    let (x0, y0, x1, y1) = (LEFT, TOP + plot_h, LEFT + plot_w, TOP);
    let _ = writeln!(w, r#"<g stroke="black" stroke-width="1">"#);
    let _ = writeln!(w, r#"<line x1="{x0:.1}" y1="{y0:.1}" x2="{x1:.1}" y2="{y0:.1}"/>"#);
    let _ = writeln!(w, r#"<line x1="{x0:.1}" y1="{y0:.1}" x2="{x0:.1}" y2="{y1:.1}"/>"#);
    let _ = writeln!(w, "</g>");
    for i in 0..=4 {
        let f = i as f64 / 4.0;
        let xv = x_lo + f * (x_hi - x_lo);
        let yv = y_lo + f * (y_hi - y_lo);
        let _ = writeln!(
            w,
            r#"<line x1="{0:.1}" y1="{1:.1}" x2="{0:.1}" y2="{2:.1}" stroke="black"/><text x="{0:.1}" y="{3:.1}" text-anchor="middle">{4}</text>"#,
            px(xv),
            y0,
            y0 + 5.0,
            y0 + 18.0,
            format_sig(xv, 3)
        );
        let _ = writeln!(
            w,
            r#"<line x1="{0:.1}" y1="{1:.1}" x2="{2:.1}" y2="{1:.1}" stroke="black"/><text x="{3:.1}" y="{4:.1}" text-anchor="end">{5}</text>"#,
            x0 - 5.0,
            py(yv),
            x0,
            x0 - 8.0,
            py(yv) + 4.0,
            format_sig(yv, 3)
        );
    }
    let _ = writeln!(
        w,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
        LEFT + plot_w / 2.0,
        HEIGHT - 15.0,
        xa.name()
    );
    let _ = writeln!(
        w,
        r#"<text x="20" y="{0:.1}" text-anchor="middle" transform="rotate(-90 20 {0:.1})">{1}</text>"#,
        TOP + plot_h / 2.0,
        ya.name()
    );

    for (k, s) in series.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let _ = writeln!(w, r#"<g class="series" data-policy="{}">"#, escape(&s.name));
        if s.points.len() >= 2 {
            let pts: Vec<String> = s
                .points
                .iter()
                .map(|(x, m)| format!("{:.2},{:.2}", px(*x), py(m.mean)))
                .collect();
            let _ = writeln!(
                w,
                r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#,
                pts.join(" ")
            );
        }
        for (x, m) in &s.points {
            let cx = px(*x);
            let _ = writeln!(
                w,
                r#"<line x1="{cx:.2}" y1="{:.2}" x2="{cx:.2}" y2="{:.2}" stroke="{color}"/>"#,
                py(m.mean - m.se),
                py(m.mean + m.se)
            );
            let _ = writeln!(
                w,
                r#"<circle cx="{cx:.2}" cy="{:.2}" r="4" fill="{color}"/>"#,
                py(m.mean)
            );
        }
        let _ = writeln!(w, "</g>");
    }

    let _ = writeln!(w, r#"<g class="legend">"#);
    for (k, s) in series.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let ly = TOP + 10.0 + 20.0 * k as f64;
        let lx = WIDTH - RIGHT + 20.0;
        let _ = writeln!(
            w,
            r#"<rect x="{lx:.1}" y="{:.1}" width="12" height="12" fill="{color}"/><text x="{:.1}" y="{:.1}">{}</text>"#,
            ly - 10.0,
            lx + 18.0,
            ly,
            escape(&s.name)
        );
    }
    let _ = writeln!(w, "</g>");
    let _ = writeln!(w, "</svg>");
    Ok(svg)
}

pub fn write_chart(r: &SweepResult, x_axis: &str, y_axis: &str, path: impl AsRef<Path>) -> Result<()> {
    let svg = chart_svg(r, x_axis, y_axis)?;
    let path = path.as_ref();
    fs::write(path, svg).map_err(|e| Error::io(path, e))
}
