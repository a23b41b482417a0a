//! Deterministic SVG rendering of 2D trajectories.

use std::fmt::Write as _;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub name: String,
    pub points: Vec<[f64; 2]>,
}

impl Series {
    pub fn new(name: impl Into<String>, points: Vec<[f64; 2]>) -> Self {
        Series { name: name.into(), points }
    }
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];
const WIDTH: f64 = 800.0;
const HEIGHT: f64 = 640.0;
const MARGIN: f64 = 60.0;
const LEGEND_ROW: f64 = 18.0;

/// Largest "nice" step (1, 2 or 5 times a power of ten) giving at most
/// `max_ticks` intervals over `span`.
fn tick_step(span: f64, max_ticks: usize) -> f64 {
    let raw = span / max_ticks as f64;
    let base = 10f64.powf(raw.log10().floor());
    [1.0, 2.0, 5.0, 10.0]
        .into_iter()
        .map(|m| m * base)
        .find(|s| *s >= raw)
        .unwrap_or(10.0 * base)
}

fn fmt_tick(v: f64, step: f64) -> String {
    let decimals = if step >= 1.0 { 0 } else { (-step.log10().floor()) as usize };
    let s = format!("{v:.decimals$}");
    if s.trim_start_matches('-').chars().all(|c| c == '0' || c == '.') {
        format!("{:.decimals$}", 0.0)
    } else {
        s
    }
}

/// Overlays the series in one panel with equal axis scaling, metre ticks
/// and a legend. Output depends only on the input values.
pub fn render_svg(title: &str, series: &[Series]) -> Result<String> {
    let all: Vec<[f64; 2]> = series.iter().flat_map(|s| s.points.iter().copied()).collect();
    if all.is_empty() {
        return Err(Error::InvalidInput("nothing to plot".into()));
    }
    if all.iter().any(|p| !(p[0].is_finite() && p[1].is_finite())) {
        return Err(Error::InvalidInput("non-finite coordinate in plot input".into()));
    }
    let (mut x0, mut x1, mut y0, mut y1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for p in &all {
        x0 = x0.min(p[0]);
        x1 = x1.max(p[0]);
        y0 = y0.min(p[1]);
        y1 = y1.max(p[1]);
    }
    let pad = 0.05 * (x1 - x0).max(y1 - y0).max(1.0);
    let (x0, x1, y0, y1) = (x0 - pad, x1 + pad, y0 - pad, y1 + pad);

    let legend_h = LEGEND_ROW * series.len() as f64 + 10.0;
    let plot_w = WIDTH - 2.0 * MARGIN;
    let plot_h = HEIGHT - 2.0 * MARGIN - legend_h;
    let scale = (plot_w / (x1 - x0)).min(plot_h / (y1 - y0));
    let off_x = MARGIN + 0.5 * (plot_w - scale * (x1 - x0));
    let off_y = MARGIN + 0.5 * (plot_h - scale * (y1 - y0));
    let sx = |x: f64| off_x + (x - x0) * scale;
    let sy = |y: f64| off_y + (y1 - y) * scale;

    let mut svg = String::new();
    let w = |svg: &mut String, s: String| {
        svg.push_str(&s);
        svg.push('\n');
    };
    w(
        &mut svg,
        format!(
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
        ),
    );
    w(&mut svg, format!(r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#));
    w(&mut svg, format!(r#"<text x="{}" y="30" text-anchor="middle" font-size="16">{}</text>"#, WIDTH / 2.0, escape(title)));

    let (bx0, by0, bx1, by1) = (sx(x0), sy(y1), sx(x1), sy(y0));
    w(
        &mut svg,
        format!(
            r##"<rect x="{bx0:.2}" y="{by0:.2}" width="{:.2}" height="{:.2}" fill="none" stroke="#444"/>"##,
            bx1 - bx0,
            by1 - by0
        ),
    );
    let step = tick_step((x1 - x0).max(y1 - y0), 8);
    let mut t = (x0 / step).ceil() * step;
    while t <= x1 {
        let px = sx(t);
        w(&mut svg, format!(r##"<line x1="{px:.2}" y1="{by1:.2}" x2="{px:.2}" y2="{:.2}" stroke="#444"/>"##, by1 + 5.0));
        w(&mut svg, format!(r#"<text x="{px:.2}" y="{:.2}" text-anchor="middle">{}</text>"#, by1 + 18.0, fmt_tick(t, step)));
        t += step;
    }
    let mut t = (y0 / step).ceil() * step;
    while t <= y1 {
        let py = sy(t);
        w(&mut svg, format!(r##"<line x1="{:.2}" y1="{py:.2}" x2="{bx0:.2}" y2="{py:.2}" stroke="#444"/>"##, bx0 - 5.0));
        w(&mut svg, format!(r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#, bx0 - 8.0, py + 4.0, fmt_tick(t, step)));
        t += step;
    }
    w(&mut svg, format!(r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">x [m]</text>"#, (bx0 + bx1) / 2.0, by1 + 36.0));
    w(
        &mut svg,
        format!(
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle" transform="rotate(-90 {:.2} {:.2})">y [m]</text>"#,
            bx0 - 40.0,
            (by0 + by1) / 2.0,
            bx0 - 40.0,
            (by0 + by1) / 2.0
        ),
    );

    for (k, s) in series.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let mut pts = String::new();
        for p in &s.points {
            let _ = write!(pts, "{:.2},{:.2} ", sx(p[0]), sy(p[1]));
        }
        w(
            &mut svg,
            format!(r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#, pts.trim_end()),
        );
    }
    let ly = HEIGHT - MARGIN - legend_h + 30.0;
    for (k, s) in series.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let y = ly + LEGEND_ROW * k as f64;
        w(
            &mut svg,
            format!(r#"<line x1="{MARGIN}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="{color}" stroke-width="3"/>"#, MARGIN + 24.0),
        );
        w(&mut svg, format!(r#"<text x="{:.2}" y="{:.2}">{}</text>"#, MARGIN + 32.0, y + 4.0, escape(&s.name)));
    }
    w(&mut svg, "</svg>".to_string());
    Ok(svg)
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}
