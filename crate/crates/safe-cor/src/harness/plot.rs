//! Minimal SVG line charts for training curves: no drawing dependencies,
//! just deterministic text output.

use std::path::{Path, PathBuf};

use crate::error::Result;
use crate::trainer::read_metrics_csv;

const WIDTH: f64 = 800.0;
const HEIGHT: f64 = 500.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 780.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 450.0;
const PALETTE: [&str; 6] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b",
];

#[derive(Debug, Clone)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

/// Linear map of `v` from `[lo, hi]` to `[out_lo, out_hi]`. Callers pass a
/// flipped output range for SVG y coordinates, which grow downward.
pub fn map_linear(v: f64, lo: f64, hi: f64, out_lo: f64, out_hi: f64) -> f64 {
    out_lo + (v - lo) / (hi - lo) * (out_hi - out_lo)
}

fn padded_range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for v in values {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if !lo.is_finite() || !hi.is_finite() {
        return (0.0, 1.0);
    }
    if lo == hi {
        return (lo - 1.0, hi + 1.0);
    }
    let pad = 0.05 * (hi - lo);
    (lo - pad, hi + pad)
}

fn tick_label(v: f64) -> String {
    let s = format!("{v:.4}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s.is_empty() || s == "-" {
        "0".to_owned()
    } else {
        s.to_owned()
    }
}

/// Renders one chart. Every series is a polyline; `threshold` adds a dashed
/// horizontal rule (constraint threshold in cost charts). With no data the
/// chart still carries axes, ticks, and the threshold line.
pub fn line_chart_svg(
    title: &str,
    x_label: &str,
    y_label: &str,
    series: &[Series],
    threshold: Option<f64>,
) -> String {
    let (x_lo, x_hi) = padded_range(series.iter().flat_map(|s| s.points.iter().map(|p| p.0)));
    let (y_lo, y_hi) = padded_range(
        series
            .iter()
            .flat_map(|s| s.points.iter().map(|p| p.1))
            .chain(threshold),
    );
    let x_px = |v: f64| map_linear(v, x_lo, x_hi, LEFT, RIGHT);
    let y_px = |v: f64| map_linear(v, y_lo, y_hi, BOTTOM, TOP);

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" \
         viewBox=\"0 0 {WIDTH} {HEIGHT}\" font-family=\"sans-serif\" font-size=\"13\">\n"
    ));
    svg.push_str(&format!(
        "<rect x=\"0\" y=\"0\" width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"white\"/>\n"
    ));
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"22\" text-anchor=\"middle\" font-size=\"16\">{title}</text>\n",
        (LEFT + RIGHT) / 2.0
    ));
    // axes
    svg.push_str(&format!(
        "<line x1=\"{LEFT}\" y1=\"{BOTTOM}\" x2=\"{RIGHT}\" y2=\"{BOTTOM}\" stroke=\"black\"/>\n"
    ));
    svg.push_str(&format!(
        "<line x1=\"{LEFT}\" y1=\"{TOP}\" x2=\"{LEFT}\" y2=\"{BOTTOM}\" stroke=\"black\"/>\n"
    ));
    // ticks
    for i in 0..=4 {
        let f = i as f64 / 4.0;
        let xv = x_lo + f * (x_hi - x_lo);
        let x = x_px(xv);
        svg.push_str(&format!(
            "<line x1=\"{x:.2}\" y1=\"{BOTTOM}\" x2=\"{x:.2}\" y2=\"{}\" stroke=\"black\"/>\n",
            BOTTOM + 5.0
        ));
        svg.push_str(&format!(
            "<text x=\"{x:.2}\" y=\"{}\" text-anchor=\"middle\">{}</text>\n",
            BOTTOM + 20.0,
            tick_label(xv)
        ));
        let yv = y_lo + f * (y_hi - y_lo);
        let y = y_px(yv);
        svg.push_str(&format!(
            "<line x1=\"{}\" y1=\"{y:.2}\" x2=\"{LEFT}\" y2=\"{y:.2}\" stroke=\"black\"/>\n",
            LEFT - 5.0
        ));
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{:.2}\" text-anchor=\"end\">{}</text>\n",
            LEFT - 8.0,
            y + 4.0,
            tick_label(yv)
        ));
    }
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{x_label}</text>\n",
        (LEFT + RIGHT) / 2.0,
        HEIGHT - 10.0
    ));
    svg.push_str(&format!(
        "<text x=\"18\" y=\"{}\" text-anchor=\"middle\" transform=\"rotate(-90 18 {})\">{y_label}</text>\n",
        (TOP + BOTTOM) / 2.0,
        (TOP + BOTTOM) / 2.0
    ));
    if let Some(d) = threshold {
        let y = y_px(d);
        svg.push_str(&format!(
            "<line x1=\"{LEFT}\" y1=\"{y:.2}\" x2=\"{RIGHT}\" y2=\"{y:.2}\" stroke=\"#444444\" \
             stroke-dasharray=\"6,4\"/>\n"
        ));
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{:.2}\" text-anchor=\"end\" fill=\"#444444\">threshold {}</text>\n",
            RIGHT - 4.0,
            y - 6.0,
            tick_label(d)
        ));
    }
    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        if !s.points.is_empty() {
            let pts: Vec<String> = s
                .points
                .iter()
                .map(|&(x, y)| format!("{:.2},{:.2}", x_px(x), y_px(y)))
                .collect();
            svg.push_str(&format!(
                "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\" points=\"{}\"/>\n",
                pts.join(" ")
            ));
        }
        let ly = TOP + 16.0 * (i as f64 + 1.0);
        svg.push_str(&format!(
            "<line x1=\"{}\" y1=\"{ly:.2}\" x2=\"{}\" y2=\"{ly:.2}\" stroke=\"{color}\" stroke-width=\"2\"/>\n",
            RIGHT - 150.0,
            RIGHT - 126.0
        ));
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{:.2}\">{}</text>\n",
            RIGHT - 120.0,
            ly + 4.0,
            s.label
        ));
    }
    svg.push_str("</svg>\n");
    svg
}

/// Reads labeled metrics CSVs and writes the three training curves
/// (reward return, cost rate with the constraint threshold, cumulative
/// violations) as SVG files into `out_dir`.
pub fn emit_plots(
    inputs: &[(String, PathBuf)],
    out_dir: &Path,
    threshold_d: f64,
) -> Result<Vec<PathBuf>> {
    let mut reward = Vec::new();
    let mut cost_rate = Vec::new();
    let mut total_cv = Vec::new();
    for (label, path) in inputs {
        let rows = read_metrics_csv(path)?;
        let pick = |f: fn(&crate::trainer::TrainMetricsRow) -> f64| Series {
            label: label.clone(),
            points: rows.iter().map(|r| (r.steps as f64, f(r))).collect(),
        };
        reward.push(pick(|r| r.avg_reward_return));
        cost_rate.push(pick(|r| r.cost_rate));
        total_cv.push(pick(|r| r.total_cv));
    }
    std::fs::create_dir_all(out_dir)?;
    let charts = [
        ("reward_return.svg", "Average reward return", None, &reward),
        ("cost_rate.svg", "Average cost per step", Some(threshold_d), &cost_rate),
        ("total_cv.svg", "Cumulative constraint violations", None, &total_cv),
    ];
    let mut written = Vec::with_capacity(charts.len());
    for (name, title, threshold, series) in charts {
        let svg = line_chart_svg(title, "environment steps", title, series, threshold);
        let path = out_dir.join(name);
        std::fs::write(&path, svg)?;
        written.push(path);
    }
    Ok(written)
}
