//! Minimal static SVG charts with fixed number formatting.

use std::fmt::Write;

const W: f64 = 360.0;
const H: f64 = 260.0;
const LEFT: f64 = 52.0;
const RIGHT: f64 = 12.0;
const TOP: f64 = 28.0;
const BOTTOM: f64 = 40.0;

pub const COLORS: [&str; 4] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];

#[derive(Debug, Clone, Default)]
pub struct Series {
    pub label: String,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub color: &'static str,
    pub dashed: bool,
}

#[derive(Debug, Clone, Default)]
pub struct Ribbon {
    pub x: Vec<f64>,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub color: &'static str,
}

#[derive(Debug, Clone, Default)]
pub struct Panel {
    pub title: String,
    pub xlabel: String,
    pub ylabel: String,
    pub series: Vec<Series>,
    pub ribbons: Vec<Ribbon>,
    /// Scatter points `(x, y, color)`.
    pub points: Vec<(f64, f64, &'static str)>,
    pub hlines: Vec<(f64, &'static str)>,
    pub vlines: Vec<(f64, &'static str)>,
    /// Shaded x intervals.
    pub spans: Vec<(f64, f64)>,
}

fn range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        let pad = lo.abs().max(1.0) * 0.05;
        return (lo - pad, hi + pad);
    }
    let pad = 0.05 * (hi - lo);
    (lo - pad, hi + pad)
}

fn ticks(lo: f64, hi: f64) -> Vec<f64> {
    let raw = (hi - lo) / 4.0;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0].iter().map(|m| m * mag).find(|s| *s >= raw).unwrap_or(10.0 * mag);
    let first = (lo / step).ceil() as i64;
    let last = (hi / step).floor() as i64;
    (first..=last).map(|k| k as f64 * step).collect()
}

fn label(v: f64) -> String {
    let s = format!("{v:.3}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" { "0".into() } else { s.into() }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn render_panel(out: &mut String, p: &Panel, ox: f64, oy: f64) {
    let xs = p
        .series
        .iter()
        .flat_map(|s| s.x.iter().copied())
        .chain(p.ribbons.iter().flat_map(|r| r.x.iter().copied()))
        .chain(p.points.iter().map(|q| q.0))
        .chain(p.vlines.iter().map(|v| v.0));
    let (x0, x1) = range(xs);
    let ys = p
        .series
        .iter()
        .flat_map(|s| s.y.iter().copied())
        .chain(p.ribbons.iter().flat_map(|r| r.lo.iter().chain(&r.hi).copied()))
        .chain(p.points.iter().map(|q| q.1))
        .chain(p.hlines.iter().map(|h| h.0));
    let (y0, y1) = range(ys);
    let pw = W - LEFT - RIGHT;
    let ph = H - TOP - BOTTOM;
    let sx = |x: f64| ox + LEFT + (x - x0) / (x1 - x0) * pw;
    let sy = |y: f64| oy + TOP + (1.0 - (y - y0) / (y1 - y0)) * ph;
    let _ = writeln!(
        out,
        r##"<rect x="{:.2}" y="{:.2}" width="{pw:.2}" height="{ph:.2}" fill="none" stroke="#444"/>"##,
        ox + LEFT,
        oy + TOP
    );
    let _ = writeln!(
        out,
        r#"<text x="{:.2}" y="{:.2}" font-size="12" text-anchor="middle">{}</text>"#,
        ox + W / 2.0,
        oy + 16.0,
        escape(&p.title)
    );
    for &(a, b) in &p.spans {
        let (a, b) = (sx(a.max(x0)), sx(b.min(x1)));
        let _ = writeln!(
            out,
            r##"<rect x="{a:.2}" y="{:.2}" width="{:.2}" height="{ph:.2}" fill="#ffd54f" fill-opacity="0.35"/>"##,
            oy + TOP,
            (b - a).max(0.5)
        );
    }
    for t in ticks(x0, x1) {
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" font-size="9" text-anchor="middle">{}</text>"#,
            sx(t),
            oy + TOP + ph + 12.0,
            label(t)
        );
    }
    for t in ticks(y0, y1) {
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" font-size="9" text-anchor="end">{}</text>"#,
            ox + LEFT - 4.0,
            sy(t) + 3.0,
            label(t)
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{:.2}" y="{:.2}" font-size="10" text-anchor="middle">{}</text>"#,
        ox + LEFT + pw / 2.0,
        oy + H - 8.0,
        escape(&p.xlabel)
    );
    let _ = writeln!(
        out,
        r#"<text x="{:.2}" y="{:.2}" font-size="10" text-anchor="middle" transform="rotate(-90 {:.2} {:.2})">{}</text>"#,
        ox + 12.0,
        oy + TOP + ph / 2.0,
        ox + 12.0,
        oy + TOP + ph / 2.0,
        escape(&p.ylabel)
    );
    for r in &p.ribbons {
        let mut d = String::new();
        for (i, (x, hi)) in r.x.iter().zip(&r.hi).enumerate() {
            let _ = write!(d, "{}{:.2},{:.2} ", if i == 0 { "M" } else { "L" }, sx(*x), sy(*hi));
        }
        for (x, lo) in r.x.iter().zip(&r.lo).rev() {
            let _ = write!(d, "L{:.2},{:.2} ", sx(*x), sy(*lo));
        }
        let _ = writeln!(out, r#"<path d="{}Z" fill="{}" fill-opacity="0.2" stroke="none"/>"#, d, r.color);
    }
    for &(y, color) in &p.hlines {
        let _ = writeln!(
            out,
            r#"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="{color}" stroke-dasharray="4 3"/>"#,
            sx(x0),
            sy(y),
            sx(x1),
            sy(y)
        );
    }
    for &(x, color) in &p.vlines {
        let _ = writeln!(
            out,
            r#"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="{color}" stroke-dasharray="4 3"/>"#,
            sx(x),
            sy(y0),
            sx(x),
            sy(y1)
        );
    }
    for (k, s) in p.series.iter().enumerate() {
        let mut d = String::new();
        let mut pen = false;
        for (x, y) in s.x.iter().zip(&s.y) {
            if !y.is_finite() {
                pen = false;
                continue;
            }
            let _ = write!(d, "{}{:.2},{:.2} ", if pen { "L" } else { "M" }, sx(*x), sy(*y));
            pen = true;
        }
        let dash = if s.dashed { r#" stroke-dasharray="5 3""# } else { "" };
        let _ = writeln!(out, r#"<path d="{}" fill="none" stroke="{}" stroke-width="1.5"{dash}/>"#, d.trim_end(), s.color);
        if !s.label.is_empty() {
            let ly = oy + TOP + 12.0 + 12.0 * k as f64;
            let _ = writeln!(
                out,
                r#"<text x="{:.2}" y="{ly:.2}" font-size="9" fill="{}">{}</text>"#,
                ox + LEFT + 6.0,
                s.color,
                escape(&s.label)
            );
        }
    }
    for &(x, y, color) in &p.points {
        let _ = writeln!(out, r#"<circle cx="{:.2}" cy="{:.2}" r="2.5" fill="{color}"/>"#, sx(x), sy(y));
    }
}

/// Lays panels out in a grid with `cols` columns.
pub fn render(panels: &[Panel], cols: usize) -> String {
    let cols = cols.max(1);
    let rows = panels.len().div_ceil(cols).max(1);
    let (tw, th) = (W * cols.min(panels.len().max(1)) as f64, H * rows as f64);
    let mut out = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{tw:.0}\" height=\"{th:.0}\" viewBox=\"0 0 {tw:.0} {th:.0}\" font-family=\"sans-serif\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
    );
    for (i, p) in panels.iter().enumerate() {
        render_panel(&mut out, p, W * (i % cols) as f64, H * (i / cols) as f64);
    }
    out.push_str("</svg>\n");
    out
}
