//! Static SVG line charts of metrics.

use std::fmt::Write as _;

use crate::error::{Error, Result};

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const MARGIN: f64 = 56.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

/// One named polyline.
#[derive(Debug, Clone)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn bounds(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if lo == hi {
        (lo - 0.5, hi + 0.5)
    } else {
        (lo, hi)
    }
}

/// Renders `series` as an SVG document.
pub fn line_chart(title: &str, x_label: &str, y_label: &str, series: &[Series]) -> Result<String> {
    let pts = || series.iter().flat_map(|s| s.points.iter());
    if pts().next().is_none() {
        return Err(Error::invalid("plot", "no points to draw"));
    }
    if pts().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
        return Err(Error::invalid("plot", "non-finite point"));
    }
    let (x0, x1) = bounds(pts().map(|p| p.0));
    let (y0, y1) = bounds(pts().map(|p| p.1));
    let sx = |x: f64| MARGIN + (x - x0) / (x1 - x0) * (WIDTH - 2.0 * MARGIN);
    let sy = |y: f64| HEIGHT - MARGIN - (y - y0) / (y1 - y0) * (HEIGHT - 2.0 * MARGIN);
    let mut svg = String::new();
    let w = &mut svg;
    writeln!(w, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" font-family="sans-serif" font-size="12">"#).unwrap();
    writeln!(w, r#"<rect width="100%" height="100%" fill="white"/>"#).unwrap();
    writeln!(w, r#"<text x="{}" y="24" text-anchor="middle" font-size="15">{}</text>"#, WIDTH / 2.0, escape(title)).unwrap();
    let (bl, br, bt, bb) = (MARGIN, WIDTH - MARGIN, MARGIN, HEIGHT - MARGIN);
    writeln!(w, r#"<path d="M{bl},{bt} V{bb} H{br}" fill="none" stroke="black"/>"#).unwrap();
    for i in 0..=4 {
        let t = i as f64 / 4.0;
        let (xv, yv) = (x0 + t * (x1 - x0), y0 + t * (y1 - y0));
        writeln!(w, r#"<text x="{:.1}" y="{}" text-anchor="middle">{}</text>"#, sx(xv), bb + 16.0, fmt_tick(xv)).unwrap();
        writeln!(w, r#"<text x="{}" y="{:.1}" text-anchor="end">{}</text>"#, bl - 6.0, sy(yv) + 4.0, fmt_tick(yv)).unwrap();
    }
    writeln!(w, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, WIDTH / 2.0, HEIGHT - 12.0, escape(x_label)).unwrap();
    writeln!(w, r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">{}</text>"#, HEIGHT / 2.0, HEIGHT / 2.0, escape(y_label)).unwrap();
    for (i, s) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let path: Vec<String> = s.points.iter().map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y))).collect();
        writeln!(w, r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#, path.join(" ")).unwrap();
        for &(x, y) in &s.points {
            writeln!(w, r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{color}"/>"#, sx(x), sy(y)).unwrap();
        }
        let ly = bt + 16.0 * i as f64;
        writeln!(w, r#"<text x="{}" y="{ly}" fill="{color}" text-anchor="end">{}</text>"#, br, escape(&s.name)).unwrap();
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

fn fmt_tick(v: f64) -> String {
    if v.abs() >= 1000.0 || (v != 0.0 && v.abs() < 0.01) {
        format!("{v:.1e}")
    } else {
        format!("{v:.3}")
    }
}

/// Extracts `(epoch, value)` series for `metric` from `metrics.csv` text,
/// one series per split that reports it.
pub fn series_from_csv(csv: &str, metric: &str) -> Result<Vec<Series>> {
    let mut out: Vec<Series> = Vec::new();
    for (i, line) in csv.lines().enumerate().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        let [epoch, split, name, value] = f[..] else {
            return Err(Error::Format(format!("metrics line {}: expected 4 fields", i + 1)));
        };
        if name != metric {
            continue;
        }
        let parse = |s: &str| {
            s.parse::<f64>()
                .map_err(|_| Error::Format(format!("metrics line {}: bad number `{s}`", i + 1)))
        };
        let point = (parse(epoch)?, parse(value)?);
        match out.iter_mut().find(|s| s.name == split) {
            Some(s) => s.points.push(point),
            None => out.push(Series {
                name: split.to_string(),
                points: vec![point],
            }),
        }
    }
    Ok(out)
}
