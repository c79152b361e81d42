//! Minimal SVG charts written by hand.

use std::fmt::Write;

use crate::engine::DegradationCurve;
use crate::stats::{neg_log10, SensitivityReport};

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const MARGIN: f64 = 56.0;
const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
];

/// Mean curve over `curves` on `points` evenly spaced removal fractions,
/// each curve linearly interpolated in removed fraction.
pub fn mean_curve(curves: &[&DegradationCurve], points: usize) -> Vec<(f64, f64)> {
    let points = points.max(2);
    let grid: Vec<f64> = (0..points).map(|i| i as f64 / (points - 1) as f64).collect();
    let mut sums = vec![0.0; points];
    let mut used = 0usize;
    for c in curves {
        let units = c.unit_count();
        if units == 0 {
            continue;
        }
        used += 1;
        let xs: Vec<f64> = c.removed.iter().map(|&r| r as f64 / units as f64).collect();
        for (sum, &x) in sums.iter_mut().zip(&grid) {
            let j = xs.partition_point(|&v| v < x).min(xs.len() - 1);
            let y = if j == 0 || xs[j] == x {
                c.values[j]
            } else {
                let (x0, x1) = (xs[j - 1], xs[j]);
                let t = (x - x0) / (x1 - x0);
                c.values[j - 1] + t * (c.values[j] - c.values[j - 1])
            };
            *sum += y;
        }
    }
    let used = used.max(1) as f64;
    grid.into_iter().zip(sums).map(|(x, s)| (x, s / used)).collect()
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn header(out: &mut String, title: &str) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>"#,
        WIDTH / 2.0,
        escape(title)
    );
}

fn axes(out: &mut String, x_label: &str, y_label: &str, y_min: f64, y_max: f64) {
    let (x0, y0, x1, y1) = (MARGIN, HEIGHT - MARGIN, WIDTH - MARGIN, MARGIN);
    let _ = writeln!(
        out,
        r#"<path d="M{x0},{y1} L{x0},{y0} L{x1},{y0}" stroke="black" fill="none"/>"#
    );
    for i in 0..=5 {
        let f = i as f64 / 5.0;
        let y = y0 - f * (y0 - y1);
        let v = y_min + f * (y_max - y_min);
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{:.1}" text-anchor="end">{v:.2}</text>"#,
            x0 - 6.0,
            y + 4.0
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
        (x0 + x1) / 2.0,
        HEIGHT - 16.0,
        escape(x_label)
    );
    let _ = writeln!(
        out,
        r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">{}</text>"#,
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0,
        escape(y_label)
    );
}

/// Line chart of `(label, points)` series with x in `[0, 1]`.
pub fn curves_svg(title: &str, series: &[(String, Vec<(f64, f64)>)]) -> String {
    let mut y_min: f64 = 0.0;
    let mut y_max: f64 = 1.0;
    for (_, pts) in series {
        for &(_, y) in pts {
            if y.is_finite() {
                y_min = y_min.min(y);
                y_max = y_max.max(y);
            }
        }
    }
    let mut out = String::new();
    header(&mut out, title);
    axes(&mut out, "fraction of units removed", "normalized class score", y_min, y_max);
    let sx = |x: f64| MARGIN + x * (WIDTH - 2.0 * MARGIN);
    let sy = |y: f64| HEIGHT - MARGIN - (y - y_min) / (y_max - y_min) * (HEIGHT - 2.0 * MARGIN);
    for i in 0..=5 {
        let f = i as f64 / 5.0;
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{}" text-anchor="middle">{f:.1}</text>"#,
            sx(f),
            HEIGHT - MARGIN + 16.0
        );
    }
    for (k, (label, pts)) in series.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let path: Vec<String> = pts
            .iter()
            .filter(|(_, y)| y.is_finite())
            .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
            .collect();
        let _ = writeln!(
            out,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#,
            path.join(" ")
        );
        let ly = MARGIN + 16.0 * k as f64;
        let _ = writeln!(
            out,
            r#"<line x1="{}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/><text x="{}" y="{}">{}</text>"#,
            WIDTH - MARGIN - 120.0,
            WIDTH - MARGIN - 100.0,
            WIDTH - MARGIN - 96.0,
            ly + 4.0,
            escape(label)
        );
    }
    out.push_str("</svg>\n");
    out
}

/// Grouped bars of `-log10 p` per method and evaluator, with the 0.05 line.
pub fn pvalues_svg(title: &str, report: &SensitivityReport) -> String {
    let mut methods: Vec<&str> = Vec::new();
    let mut evaluators: Vec<&str> = Vec::new();
    for c in &report.cells {
        if !methods.contains(&c.method.as_str()) {
            methods.push(&c.method);
        }
        if !evaluators.contains(&c.evaluator.as_str()) {
            evaluators.push(&c.evaluator);
        }
    }
    let heights: Vec<f64> = report.cells.iter().filter_map(|c| c.p.map(neg_log10)).collect();
    let y_max = heights.iter().copied().fold(neg_log10(0.05), f64::max) * 1.1;
    let mut out = String::new();
    header(&mut out, title);
    axes(&mut out, "method", "-log10 p", 0.0, y_max);
    let plot_w = WIDTH - 2.0 * MARGIN;
    let plot_h = HEIGHT - 2.0 * MARGIN;
    let group_w = plot_w / methods.len().max(1) as f64;
    let bar_w = group_w * 0.8 / evaluators.len().max(1) as f64;
    for (mi, method) in methods.iter().enumerate() {
        let gx = MARGIN + mi as f64 * group_w;
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{}" text-anchor="middle">{}</text>"#,
            gx + group_w / 2.0,
            HEIGHT - MARGIN + 16.0,
            escape(method)
        );
        for (ei, evaluator) in evaluators.iter().enumerate() {
            let Some(p) = report.cell(method, evaluator).and_then(|c| c.p) else {
                continue;
            };
            let h = neg_log10(p) / y_max * plot_h;
            let _ = writeln!(
                out,
                r#"<rect x="{:.1}" y="{:.1}" width="{:.1}" height="{:.1}" fill="{}"><title>{} / {}: p = {p:e}</title></rect>"#,
                gx + group_w * 0.1 + ei as f64 * bar_w,
                HEIGHT - MARGIN - h,
                bar_w,
                h,
                PALETTE[ei % PALETTE.len()],
                escape(method),
                escape(evaluator)
            );
        }
    }
    let y05 = HEIGHT - MARGIN - neg_log10(0.05) / y_max * plot_h;
    let _ = writeln!(
        out,
        r#"<line x1="{MARGIN}" y1="{y05:.1}" x2="{}" y2="{y05:.1}" stroke="gray" stroke-dasharray="4 3"/>"#,
        WIDTH - MARGIN
    );
    for (ei, evaluator) in evaluators.iter().enumerate() {
        let ly = MARGIN + 16.0 * ei as f64;
        let _ = writeln!(
            out,
            r#"<rect x="{}" y="{}" width="10" height="10" fill="{}"/><text x="{}" y="{}">{}</text>"#,
            WIDTH - MARGIN - 110.0,
            ly - 8.0,
            PALETTE[ei % PALETTE.len()],
            WIDTH - MARGIN - 96.0,
            ly + 1.0,
            escape(evaluator)
        );
    }
    out.push_str("</svg>\n");
    out
}
