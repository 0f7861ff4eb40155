//! Minimal hand-written SVG charts.

use std::fmt::Write as _;

use crate::diagnostics::WindowSelectionResult;

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 360.0;
const LEFT: f64 = 60.0;
const RIGHT: f64 = 60.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;
const PALETTE: [&str; 6] = [
    "#c0392b", "#2471a3", "#1e8449", "#7d3c98", "#b9770e", "#5d6d7e",
];

pub struct Point {
    pub tau: usize,
    pub estimate: f64,
    pub p_value: Option<f64>,
}

pub struct Series {
    pub name: String,
    pub points: Vec<Point>,
}

struct Frame {
    tau_lo: f64,
    tau_hi: f64,
}

impl Frame {
    fn x(&self, tau: f64) -> f64 {
        let span = (self.tau_hi - self.tau_lo).max(0.0);
        LEFT + (tau - self.tau_lo + 0.5) / (span + 1.0) * (WIDTH - LEFT - RIGHT)
    }

    fn band(&self) -> f64 {
        (WIDTH - LEFT - RIGHT) / ((self.tau_hi - self.tau_lo).max(0.0) + 1.0)
    }
}

fn y_unit(p: f64) -> f64 {
    TOP + (1.0 - p.clamp(0.0, 1.0)) * (HEIGHT - TOP - BOTTOM)
}

fn open(out: &mut String, title: &str) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(
        out,
        r##"<rect width="100%" height="100%" fill="#ffffff"/>"##
    );
    let _ = writeln!(
        out,
        r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>"#,
        WIDTH / 2.0,
        escape(title)
    );
}

/// `ticks` holds (x, tau) pairs.
fn x_axis(out: &mut String, ticks: &[(f64, usize)]) {
    let base = HEIGHT - BOTTOM;
    let _ = writeln!(
        out,
        r#"<line x1="{LEFT}" y1="{base}" x2="{}" y2="{base}" stroke="black"/>"#,
        WIDTH - RIGHT
    );
    let stride = (ticks.len() / 21).max(1);
    for (k, &(x, t)) in ticks.iter().enumerate() {
        if k % stride == 0 {
            let _ = writeln!(
                out,
                r#"<text x="{x:.2}" y="{}" text-anchor="middle">{t}</text>"#,
                base + 15.0
            );
        }
    }
    let _ = writeln!(
        out,
        r#"<text x="{}" y="{}" text-anchor="middle">window half-length (days)</text>"#,
        WIDTH / 2.0,
        HEIGHT - 10.0
    );
}

fn p_axis(out: &mut String, x: f64, anchor: &str, dx: f64) {
    let _ = writeln!(
        out,
        r#"<line x1="{x}" y1="{TOP}" x2="{x}" y2="{}" stroke="black"/>"#,
        HEIGHT - BOTTOM
    );
    for k in 0..=5 {
        let p = k as f64 / 5.0;
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{:.2}" text-anchor="{anchor}">{p:.1}</text>"#,
            x + dx,
            y_unit(p) + 4.0
        );
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

/// p-value against window length, with the selection threshold drawn and
/// the selected window marked.
pub fn p_curve(result: &WindowSelectionResult) -> String {
    let taus: Vec<usize> = result.curve.iter().map(|p| p.tau).collect();
    let frame = Frame {
        tau_lo: *taus.first().unwrap_or(&1) as f64,
        tau_hi: *taus.last().unwrap_or(&1) as f64,
    };
    let mut out = String::new();
    open(
        &mut out,
        &format!("Placebo at {}: p-value by window", result.placebo.date),
    );
    p_axis(&mut out, LEFT, "end", -6.0);
    let ticks: Vec<(f64, usize)> = taus.iter().map(|&t| (frame.x(t as f64), t)).collect();
    x_axis(&mut out, &ticks);
    let y = y_unit(result.threshold);
    let _ = writeln!(
        out,
        r##"<line x1="{LEFT}" y1="{y:.2}" x2="{}" y2="{y:.2}" stroke="#888888" stroke-dasharray="6 4"/>"##,
        WIDTH - RIGHT
    );
    let _ = writeln!(
        out,
        r##"<text x="{}" y="{:.2}" text-anchor="end" fill="#555555">threshold {}</text>"##,
        WIDTH - RIGHT - 4.0,
        y - 4.0,
        result.threshold
    );
    if result.selected_tau_star > 0 {
        let x = frame.x(result.selected_tau_star as f64);
        let _ = writeln!(
            out,
            r##"<line x1="{x:.2}" y1="{TOP}" x2="{x:.2}" y2="{}" stroke="#1e8449"/>"##,
            HEIGHT - BOTTOM
        );
    }
    let pts: Vec<String> = result
        .curve
        .iter()
        .map(|p| format!("{:.2},{:.2}", frame.x(p.tau as f64), y_unit(p.p_value)))
        .collect();
    let _ = writeln!(
        out,
        r#"<polyline points="{}" fill="none" stroke="{}" stroke-width="2"/>"#,
        pts.join(" "),
        PALETTE[1]
    );
    for p in &result.curve {
        let _ = writeln!(
            out,
            r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{}"><title>tau={} p={}</title></circle>"#,
            frame.x(p.tau as f64),
            y_unit(p.p_value),
            PALETTE[1],
            p.tau,
            p.p_value
        );
    }
    out.push_str("</svg>\n");
    out
}

/// Grey bars for p-values (right axis) and coloured dots for estimates
/// (left axis), one colour per series.
pub fn estimate_bars(series: &[Series], title: &str) -> String {
    let mut taus: Vec<usize> = series
        .iter()
        .flat_map(|s| s.points.iter().map(|p| p.tau))
        .collect();
    taus.sort_unstable();
    taus.dedup();
    let frame = Frame {
        tau_lo: 0.0,
        tau_hi: taus.len().saturating_sub(1) as f64,
    };
    let slot = |tau: usize| frame.x(taus.iter().position(|&t| t == tau).unwrap_or(0) as f64);
    let (mut lo, mut hi) = series
        .iter()
        .flat_map(|s| s.points.iter().map(|p| p.estimate))
        .filter(|v| v.is_finite())
        .fold((0.0f64, 0.0f64), |(a, b), v| (a.min(v), b.max(v)));
    if hi - lo <= 0.0 {
        lo -= 1.0;
        hi += 1.0;
    }
    let pad = 0.05 * (hi - lo);
    let (lo, hi) = (lo - pad, hi + pad);
    let y_est = |v: f64| TOP + (hi - v) / (hi - lo) * (HEIGHT - TOP - BOTTOM);

    let mut out = String::new();
    open(&mut out, title);
    let ticks: Vec<(f64, usize)> = taus.iter().map(|&t| (slot(t), t)).collect();
    x_axis(&mut out, &ticks);
    p_axis(&mut out, WIDTH - RIGHT, "start", 6.0);
    let _ = writeln!(
        out,
        r#"<line x1="{LEFT}" y1="{TOP}" x2="{LEFT}" y2="{}" stroke="black"/>"#,
        HEIGHT - BOTTOM
    );
    for k in 0..=4 {
        let v = lo + (hi - lo) * k as f64 / 4.0;
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{:.2}" text-anchor="end">{v:.2}</text>"#,
            LEFT - 6.0,
            y_est(v) + 4.0
        );
    }
    let zero = y_est(0.0);
    let _ = writeln!(
        out,
        r##"<line x1="{LEFT}" y1="{zero:.2}" x2="{}" y2="{zero:.2}" stroke="#bbbbbb"/>"##,
        WIDTH - RIGHT
    );

    let m = series.len().max(1) as f64;
    let bar = 0.8 * frame.band() / m;
    for (j, s) in series.iter().enumerate() {
        let offset = (j as f64 - (m - 1.0) / 2.0) * bar;
        for p in &s.points {
            if let Some(pv) = p.p_value {
                let x = slot(p.tau) + offset - bar / 2.0;
                let y = y_unit(pv);
                let _ = writeln!(
                    out,
                    r##"<rect x="{x:.2}" y="{y:.2}" width="{bar:.2}" height="{:.2}" fill="#cccccc"><title>{} tau={} p={pv}</title></rect>"##,
                    HEIGHT - BOTTOM - y,
                    escape(&s.name),
                    p.tau
                );
            }
        }
    }
    for (j, s) in series.iter().enumerate() {
        let offset = (j as f64 - (m - 1.0) / 2.0) * bar;
        let color = PALETTE[j % PALETTE.len()];
        for p in &s.points {
            let _ = writeln!(
                out,
                r#"<circle cx="{:.2}" cy="{:.2}" r="3.5" fill="{color}"><title>{} tau={} estimate={}</title></circle>"#,
                slot(p.tau) + offset,
                y_est(p.estimate),
                escape(&s.name),
                p.tau,
                p.estimate
            );
        }
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{}" fill="{color}">{}</text>"#,
            LEFT + 10.0 + 120.0 * j as f64,
            TOP - 6.0,
            escape(&s.name)
        );
    }
    out.push_str("</svg>\n");
    out
}
