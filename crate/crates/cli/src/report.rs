//! Report files: CSV tables, JSON summaries and SVG plots.
//!
//! Numbers in CSV files use 15 significant digits so reruns with the same
//! configuration and seed are byte-identical.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use gwdev::deviations::VerifyRow;
use gwdev::{DecompositionValue, Error, Result};
use serde::Serialize;

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::IoFailure(format!("{}: {e}", path.display())))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::IoFailure(e.to_string()))?;
    text.push('\n');
    write_text(path, &text)
}

pub fn to_csv<F>(fill: F) -> Result<String>
where
    F: FnOnce(&mut Vec<u8>) -> Result<()>,
{
    let mut buf = Vec::new();
    fill(&mut buf)?;
    String::from_utf8(buf).map_err(|e| Error::IoFailure(e.to_string()))
}

fn opt(v: Option<u64>) -> String {
    v.map_or_else(String::new, |k| k.to_string())
}

pub fn exact_tail_csv(rows: &[DecompositionValue]) -> String {
    let mut s = String::from("n,epsilon,value,ln_value,error_bar,tilt,k_min,k_max,bounded_from\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{:.14e},{:.14e},{:.14e},{:.14e},{:.14e},{},{},{}",
            r.n,
            r.epsilon,
            r.value,
            r.ln_value,
            r.error_bar,
            r.tilt,
            r.k_range.0,
            r.k_range.1,
            opt(r.bounded_from)
        );
    }
    s
}

/// One Monte Carlo estimate set against the exact value.
#[derive(Debug, Clone, Serialize)]
pub struct CrossCheck {
    pub epsilon: f64,
    pub exact: f64,
    pub exact_error_bar: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub covered: bool,
}

pub fn cross_check_csv(rows: &[CrossCheck]) -> String {
    let mut s = String::from("epsilon,exact,exact_error_bar,ci_low,ci_high,covered\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{:.14e},{:.14e},{:.14e},{:.14e},{:.14e},{}",
            r.epsilon, r.exact, r.exact_error_bar, r.ci_low, r.ci_high, r.covered
        );
    }
    s
}

struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

const W: f64 = 640.0;
const H: f64 = 400.0;
const LEFT: f64 = 80.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;

impl Frame {
    fn px(&self, x: f64) -> f64 {
        LEFT + (x - self.x0) / (self.x1 - self.x0) * (W - LEFT - RIGHT)
    }

    fn py(&self, y: f64) -> f64 {
        H - BOTTOM - (y - self.y0) / (self.y1 - self.y0) * (H - TOP - BOTTOM)
    }
}

fn polyline(s: &mut String, pts: &[(f64, f64)], style: &str) {
    let coords: Vec<String> = pts.iter().map(|(x, y)| format!("{x:.2},{y:.2}")).collect();
    let _ = writeln!(s, r#"<polyline fill="none" {style} points="{}"/>"#, coords.join(" "));
}

/// Normalized value against n with error bars and the target band, drawn
/// only from the columns of the verification CSV.
pub fn verify_svg(title: &str, rows: &[VerifyRow]) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="20" text-anchor="middle">{}</text>"#, W / 2.0, escape(title));
    if rows.is_empty() {
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">no data</text>"#, W / 2.0, H / 2.0);
        s.push_str("</svg>\n");
        return s;
    }
    let finite = |v: f64| v.is_finite();
    let mut ys: Vec<f64> = Vec::new();
    for r in rows {
        ys.extend([r.normalized_value - r.normalized_error, r.normalized_value + r.normalized_error]);
        ys.extend([r.target_low, r.target_high]);
    }
    ys.retain(|v| finite(*v));
    let (mut y0, mut y1) = ys
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    if !y0.is_finite() {
        (y0, y1) = (0.0, 1.0);
    }
    let pad = ((y1 - y0) * 0.1).max(1e-3 * y1.abs().max(1e-12));
    let (x0, x1) = (rows[0].n as f64 - 0.5, rows[rows.len() - 1].n as f64 + 0.5);
    let f = Frame {
        x0,
        x1,
        y0: y0 - pad,
        y1: y1 + pad,
    };
    // Axes and ticks.
    let _ = writeln!(
        s,
        r#"<path d="M{l},{t} V{b} H{r}" stroke="black" fill="none"/>"#,
        l = LEFT,
        t = TOP,
        b = H - BOTTOM,
        r = W - RIGHT
    );
    for r in rows {
        let x = f.px(r.n as f64);
        let _ = writeln!(
            s,
            r#"<line x1="{x:.2}" y1="{b}" x2="{x:.2}" y2="{b2}" stroke="black"/><text x="{x:.2}" y="{ty}" text-anchor="middle">{}</text>"#,
            r.n,
            b = H - BOTTOM,
            b2 = H - BOTTOM + 5.0,
            ty = H - BOTTOM + 18.0
        );
    }
    for i in 0..=4 {
        let v = f.y0 + (f.y1 - f.y0) * i as f64 / 4.0;
        let y = f.py(v);
        let _ = writeln!(
            s,
            r#"<line x1="{a}" y1="{y:.2}" x2="{LEFT}" y2="{y:.2}" stroke="black"/><text x="{tx}" y="{ty:.2}" text-anchor="end">{v:.4}</text>"#,
            a = LEFT - 5.0,
            tx = LEFT - 8.0,
            ty = y + 4.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">n</text>"#,
        (LEFT + W - RIGHT) / 2.0,
        H - 10.0
    );
    let _ = writeln!(
        s,
        r#"<text x="16" y="{y}" text-anchor="middle" transform="rotate(-90 16 {y})">normalized value</text>"#,
        y = (TOP + H - BOTTOM) / 2.0
    );
    // Target band.
    let low: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| finite(r.target_low))
        .map(|r| (f.px(r.n as f64), f.py(r.target_low)))
        .collect();
    let high: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| finite(r.target_high))
        .map(|r| (f.px(r.n as f64), f.py(r.target_high)))
        .collect();
    polyline(&mut s, &low, r#"stroke="green" stroke-dasharray="6 4""#);
    if high != low {
        polyline(&mut s, &high, r#"stroke="green" stroke-dasharray="6 4""#);
    }
    // Values with error bars.
    let pts: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| finite(r.normalized_value))
        .map(|r| (f.px(r.n as f64), f.py(r.normalized_value)))
        .collect();
    polyline(&mut s, &pts, r#"stroke="steelblue""#);
    for r in rows.iter().filter(|r| finite(r.normalized_value)) {
        let x = f.px(r.n as f64);
        let (a, b) = (
            f.py(r.normalized_value - r.normalized_error),
            f.py(r.normalized_value + r.normalized_error),
        );
        let _ = writeln!(
            s,
            r#"<line x1="{x:.2}" y1="{a:.2}" x2="{x:.2}" y2="{b:.2}" stroke="steelblue"/><circle cx="{x:.2}" cy="{y:.2}" r="3" fill="steelblue"/>"#,
            y = f.py(r.normalized_value)
        );
    }
    s.push_str("</svg>\n");
    s
}

fn escape(t: &str) -> String {
    t.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
