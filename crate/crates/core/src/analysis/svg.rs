//! Minimal SVG renderers for curves and scatter plots.

use std::fmt::Write as _;

use super::interpolation::AggregateCurve;
use super::pca::ProjectedCloud;
use crate::scalar::Scalar;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 480.0;
const MARGIN: f64 = 48.0;
const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

struct Frame {
    x: (f64, f64),
    y: (f64, f64),
}

impl Frame {
    fn fit(xs: impl Iterator<Item = f64> + Clone, ys: impl Iterator<Item = f64> + Clone) -> Frame {
        let span = |it: &mut dyn Iterator<Item = f64>| {
            let (lo, hi) = it.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
            if !lo.is_finite() {
                (0.0, 1.0)
            } else if hi > lo {
                (lo, hi)
            } else {
                (lo - 0.5, hi + 0.5)
            }
        };
        Frame { x: span(&mut xs.clone()), y: span(&mut ys.clone()) }
    }

    fn px(&self, x: f64) -> f64 {
        MARGIN + (x - self.x.0) / (self.x.1 - self.x.0) * (WIDTH - 2.0 * MARGIN)
    }

    fn py(&self, y: f64) -> f64 {
        HEIGHT - MARGIN - (y - self.y.0) / (self.y.1 - self.y.0) * (HEIGHT - 2.0 * MARGIN)
    }

    fn axes(&self, out: &mut String, x_label: &str, y_label: &str) {
        let (x0, y0, x1, y1) = (MARGIN, HEIGHT - MARGIN, WIDTH - MARGIN, MARGIN);
        writeln!(out, r#"<path d="M{x0},{y1} L{x0},{y0} L{x1},{y0}" fill="none" stroke="black"/>"#).unwrap();
        let mid_x = WIDTH / 2.0;
        writeln!(out, r#"<text x="{mid_x}" y="{}" text-anchor="middle">{x_label}</text>"#, HEIGHT - 12.0).unwrap();
        writeln!(
            out,
            r#"<text x="14" y="{}" text-anchor="middle" transform="rotate(-90 14 {})">{y_label}</text>"#,
            HEIGHT / 2.0,
            HEIGHT / 2.0
        )
        .unwrap();
        for (v, pos) in [(self.x.0, x0), (self.x.1, x1)] {
            writeln!(out, r#"<text x="{pos}" y="{}" text-anchor="middle" font-size="10">{v:.2}</text>"#, y0 + 14.0).unwrap();
        }
        for (v, pos) in [(self.y.0, y0), (self.y.1, y1)] {
            writeln!(out, r#"<text x="{}" y="{pos}" text-anchor="end" font-size="10">{v:.2}</text>"#, x0 - 4.0).unwrap();
        }
    }
}

fn header() -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
    )
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Distance-to-A and distance-to-B curves against α.
pub fn curve_svg(curve: &AggregateCurve) -> String {
    let ys = curve.mean_to_a.iter().chain(&curve.mean_to_b).cloned();
    let frame = Frame::fit(curve.alphas.iter().cloned(), ys);
    let mut out = header();
    frame.axes(&mut out, "alpha", "Hamming distance");
    for (i, (name, ys)) in [("to A", &curve.mean_to_a), ("to B", &curve.mean_to_b)].into_iter().enumerate() {
        let path: Vec<String> =
            curve.alphas.iter().zip(ys.iter()).map(|(&x, &y)| format!("{:.2},{:.2}", frame.px(x), frame.py(y))).collect();
        writeln!(out, r#"<polyline points="{}" fill="none" stroke="{}" stroke-width="2"/>"#, path.join(" "), PALETTE[i]).unwrap();
        writeln!(out, r#"<text x="{}" y="{}" fill="{}">{name}</text>"#, WIDTH - MARGIN - 60.0, MARGIN + 16.0 * i as f64, PALETTE[i])
            .unwrap();
    }
    out.push_str("</svg>\n");
    out
}

/// Scatter of the first two projected coordinates, colored by label.
pub fn scatter_svg<T: Scalar>(cloud: &ProjectedCloud<T>) -> String {
    let coord = |p: &Vec<T>, d: usize| p.get(d).map_or(0.0, |v| v.as_f64());
    let frame = Frame::fit(cloud.points.iter().map(|p| coord(p, 0)), cloud.points.iter().map(|p| coord(p, 1)));
    let mut out = header();
    frame.axes(&mut out, "PC 1", "PC 2");
    let mut names: Vec<&str> = Vec::new();
    for (p, label) in cloud.points.iter().zip(&cloud.labels) {
        let idx = names.iter().position(|n| n == label).unwrap_or_else(|| {
            names.push(label);
            names.len() - 1
        });
        writeln!(
            out,
            r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{}" fill-opacity="0.7"/>"#,
            frame.px(coord(p, 0)),
            frame.py(coord(p, 1)),
            PALETTE[idx % PALETTE.len()]
        )
        .unwrap();
    }
    for (i, name) in names.iter().enumerate() {
        writeln!(
            out,
            r#"<text x="{}" y="{}" fill="{}">{}</text>"#,
            WIDTH - MARGIN - 100.0,
            MARGIN + 16.0 * i as f64,
            PALETTE[i % PALETTE.len()],
            escape(name)
        )
        .unwrap();
    }
    out.push_str("</svg>\n");
    out
}
