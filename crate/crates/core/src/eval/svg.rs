//! Minimal line plots written as standalone SVG.

use std::fmt::Write;

use super::{Summary, SuccessCurve};

const W: f64 = 640.0;
const H: f64 = 420.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 60.0;
const COLORS: [&str; 5] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"];

struct Series {
    name: String,
    /// (x, y, error bar half-height)
    points: Vec<(f64, f64, f64)>,
}

struct Frame {
    x_range: (f64, f64),
    y_range: (f64, f64),
}

impl Frame {
    fn x(&self, v: f64) -> f64 {
        let (a, b) = self.x_range;
        LEFT + (v - a) / (b - a).max(1e-12) * (W - LEFT - RIGHT)
    }

    fn y(&self, v: f64) -> f64 {
        let (a, b) = self.y_range;
        H - BOTTOM - (v - a) / (b - a).max(1e-12) * (H - TOP - BOTTOM)
    }
}

fn nice_ticks(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let span = (hi - lo).max(1e-9);
    let raw = span / n as f64;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 2.5, 5.0, 10.0]
        .iter()
        .map(|m| m * mag)
        .find(|s| *s >= raw)
        .unwrap_or(10.0 * mag);
    let mut t = (lo / step).ceil() * step;
    let mut out = Vec::new();
    while t <= hi + 1e-9 {
        out.push(t);
        t += step;
    }
    out
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn plot(title: &str, x_label: &str, y_label: &str, x_ticks: &[(f64, String)], series: &[Series], y_range: (f64, f64)) -> String {
    let xs: Vec<f64> = x_ticks.iter().map(|t| t.0).collect();
    let x_range = (
        xs.iter().copied().fold(f64::INFINITY, f64::min),
        xs.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    );
    let f = Frame { x_range, y_range };
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#, W / 2.0, escape(title));
    let (x0, x1, y0, y1) = (LEFT, W - RIGHT, TOP, H - BOTTOM);
    let _ = writeln!(s, r#"<path d="M{x0},{y0} L{x0},{y1} L{x1},{y1}" fill="none" stroke="black"/>"#);
    for t in nice_ticks(y_range.0, y_range.1, 6) {
        let y = f.y(t);
        let _ = writeln!(s, r##"<line x1="{x0}" y1="{y:.2}" x2="{x1}" y2="{y:.2}" stroke="#ddd"/>"##);
        let _ = writeln!(s, r#"<text x="{}" y="{:.2}" text-anchor="end">{}</text>"#, x0 - 6.0, y + 4.0, t);
    }
    for (v, label) in x_ticks {
        let x = f.x(*v);
        let _ = writeln!(s, r#"<line x1="{x:.2}" y1="{y1}" x2="{x:.2}" y2="{}" stroke="black"/>"#, y1 + 5.0);
        let _ = writeln!(s, r#"<text x="{x:.2}" y="{}" text-anchor="middle">{}</text>"#, y1 + 18.0, escape(label));
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, (x0 + x1) / 2.0, H - 15.0, escape(x_label));
    let _ = writeln!(
        s,
        r#"<text x="18" y="{}" text-anchor="middle" transform="rotate(-90 18 {})">{}</text>"#,
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0,
        escape(y_label)
    );
    for (i, ser) in series.iter().enumerate() {
        let c = COLORS[i % COLORS.len()];
        let d: Vec<String> = ser
            .points
            .iter()
            .enumerate()
            .map(|(k, (x, y, _))| format!("{}{:.2},{:.2}", if k == 0 { 'M' } else { 'L' }, f.x(*x), f.y(*y)))
            .collect();
        let _ = writeln!(s, r#"<path d="{}" fill="none" stroke="{c}" stroke-width="2"/>"#, d.join(" "));
        for (x, y, e) in &ser.points {
            let (px, py) = (f.x(*x), f.y(*y));
            let _ = writeln!(s, r#"<circle cx="{px:.2}" cy="{py:.2}" r="3" fill="{c}"/>"#);
            if *e > 0.0 {
                let _ = writeln!(
                    s,
                    r#"<line x1="{px:.2}" y1="{:.2}" x2="{px:.2}" y2="{:.2}" stroke="{c}"/>"#,
                    f.y(y - e),
                    f.y(y + e)
                );
            }
        }
        let ly = TOP + 8.0 + 16.0 * i as f64;
        let _ = writeln!(s, r#"<line x1="{}" y1="{ly}" x2="{}" y2="{ly}" stroke="{c}" stroke-width="2"/>"#, x1 - 150.0, x1 - 130.0);
        let _ = writeln!(s, r#"<text x="{}" y="{}">{}</text>"#, x1 - 125.0, ly + 4.0, escape(&ser.name));
    }
    s.push_str("</svg>\n");
    s
}

/// Success rate against threshold, one line per named curve.
pub fn success_curve_svg(title: &str, curves: &[(&str, &SuccessCurve)]) -> String {
    let ticks: Vec<(f64, String)> = curves
        .first()
        .map(|(_, c)| c.thresholds.iter().map(|t| (*t, format!("{t}"))).collect())
        .unwrap_or_default();
    let series: Vec<Series> = curves
        .iter()
        .map(|(name, c)| Series {
            name: name.to_string(),
            points: c.thresholds.iter().zip(&c.rates).map(|(t, r)| (*t, *r, 0.0)).collect(),
        })
        .collect();
    plot(title, "threshold (mm)", "fraction of frames, all joints within", &ticks, &series, (0.0, 1.0))
}

/// Mean +- std of error metrics at evenly spaced sweep points.
pub fn sweep_svg(title: &str, x_label: &str, points: &[String], summary: &[Summary], metrics: &[(&str, &str)]) -> String {
    let ticks: Vec<(f64, String)> = points.iter().enumerate().map(|(i, p)| (i as f64, p.clone())).collect();
    let mut series = Vec::new();
    let mut hi: f64 = 1.0;
    for (metric, name) in metrics {
        let pts: Vec<(f64, f64, f64)> = points
            .iter()
            .enumerate()
            .filter_map(|(i, p)| {
                summary
                    .iter()
                    .find(|s| &s.point == p && s.metric == *metric)
                    .map(|s| (i as f64, s.mean, s.std))
            })
            .collect();
        if pts.is_empty() {
            continue;
        }
        hi = pts.iter().map(|(_, m, e)| m + e).fold(hi, f64::max);
        series.push(Series {
            name: name.to_string(),
            points: pts,
        });
    }
    let ticks = if ticks.len() == 1 {
        vec![(-0.5, String::new()), ticks[0].clone(), (0.5, String::new())]
    } else {
        ticks
    };
    plot(title, x_label, "mean joint error (mm)", &ticks, &series, (0.0, hi * 1.1))
}
