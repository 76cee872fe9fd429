//! Minimal SVG line charts for the evaluation reports.

use std::fmt::Write as _;
use std::path::Path;

pub struct Series {
    pub name: String,
    /// `(x, y)` pairs; x positions are taken as given.
    pub points: Vec<(f64, f64)>,
}

const W: f64 = 640.0;
const H: f64 = 420.0;
const MARGIN_L: f64 = 70.0;
const MARGIN_R: f64 = 160.0;
const MARGIN_T: f64 = 40.0;
const MARGIN_B: f64 = 60.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

fn nice_range(lo: f64, hi: f64) -> (f64, f64) {
    if !(lo.is_finite() && hi.is_finite()) || lo == hi {
        let c = if lo.is_finite() { lo } else { 0.0 };
        return (c - 1.0, c + 1.0);
    }
    let pad = (hi - lo) * 0.06;
    (lo - pad, hi + pad)
}

/// Writes a line chart. X tick labels may be arbitrary strings positioned at
/// the given x values (useful for categorical sweep grids).
pub fn line_chart(
    title: &str,
    x_label: &str,
    y_label: &str,
    x_ticks: &[(f64, String)],
    series: &[Series],
    path: &Path,
) -> std::io::Result<()> {
    let xs: Vec<f64> = series
        .iter()
        .flat_map(|s| s.points.iter().map(|p| p.0))
        .collect();
    let ys: Vec<f64> = series
        .iter()
        .flat_map(|s| s.points.iter().map(|p| p.1))
        .collect();
    let (x_lo, x_hi) = nice_range(
        xs.iter().cloned().fold(f64::INFINITY, f64::min),
        xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
    );
    let (y_lo, y_hi) = nice_range(
        ys.iter().cloned().fold(f64::INFINITY, f64::min).min(0.0),
        ys.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
    );
    let px = |x: f64| MARGIN_L + (x - x_lo) / (x_hi - x_lo) * (W - MARGIN_L - MARGIN_R);
    let py = |y: f64| H - MARGIN_B - (y - y_lo) / (y_hi - y_lo) * (H - MARGIN_T - MARGIN_B);

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#
    );
    let _ = writeln!(svg, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="24" font-size="16" text-anchor="middle" font-family="sans-serif">{title}</text>"#,
        W / 2.0
    );

    // Axes.
    let _ = writeln!(
        svg,
        r#"<line x1="{MARGIN_L}" y1="{}" x2="{}" y2="{}" stroke="black"/>"#,
        H - MARGIN_B,
        W - MARGIN_R,
        H - MARGIN_B
    );
    let _ = writeln!(
        svg,
        r#"<line x1="{MARGIN_L}" y1="{MARGIN_T}" x2="{MARGIN_L}" y2="{}" stroke="black"/>"#,
        H - MARGIN_B
    );
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" font-size="12" text-anchor="middle" font-family="sans-serif">{x_label}</text>"#,
        (MARGIN_L + W - MARGIN_R) / 2.0,
        H - 14.0
    );
    let _ = writeln!(
        svg,
        r#"<text x="18" y="{}" font-size="12" text-anchor="middle" font-family="sans-serif" transform="rotate(-90 18 {})">{y_label}</text>"#,
        (MARGIN_T + H - MARGIN_B) / 2.0,
        (MARGIN_T + H - MARGIN_B) / 2.0
    );

    for (x, label) in x_ticks {
        let xp = px(*x);
        let _ = writeln!(
            svg,
            r#"<line x1="{xp}" y1="{}" x2="{xp}" y2="{}" stroke="black"/>"#,
            H - MARGIN_B,
            H - MARGIN_B + 5.0
        );
        let _ = writeln!(
            svg,
            r#"<text x="{xp}" y="{}" font-size="11" text-anchor="middle" font-family="sans-serif">{label}</text>"#,
            H - MARGIN_B + 18.0
        );
    }
    // Y ticks at quartiles.
    for i in 0..=4 {
        let y = y_lo + (y_hi - y_lo) * i as f64 / 4.0;
        let yp = py(y);
        let _ = writeln!(
            svg,
            r#"<line x1="{}" y1="{yp}" x2="{MARGIN_L}" y2="{yp}" stroke="black"/>"#,
            MARGIN_L - 5.0
        );
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" font-size="11" text-anchor="end" font-family="sans-serif">{y:.4}</text>"#,
            MARGIN_L - 8.0,
            yp + 4.0
        );
    }

    for (si, s) in series.iter().enumerate() {
        let color = COLORS[si % COLORS.len()];
        let pts: Vec<String> = s
            .points
            .iter()
            .map(|(x, y)| format!("{:.2},{:.2}", px(*x), py(*y)))
            .collect();
        let _ = writeln!(
            svg,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#,
            pts.join(" ")
        );
        for (x, y) in &s.points {
            let _ = writeln!(
                svg,
                r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{color}"/>"#,
                px(*x),
                py(*y)
            );
        }
        let ly = MARGIN_T + 18.0 * si as f64;
        let _ = writeln!(
            svg,
            r#"<line x1="{}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/>"#,
            W - MARGIN_R + 10.0,
            W - MARGIN_R + 34.0
        );
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" font-size="11" font-family="sans-serif">{}</text>"#,
            W - MARGIN_R + 40.0,
            ly + 4.0,
            s.name
        );
    }
    let _ = writeln!(svg, "</svg>");
    std::fs::write(path, svg)
}
