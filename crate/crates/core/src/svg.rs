//! Standalone SVG charts for sweep curves, distance overlays,
//! interpolation scans, and loss slices.
//!
//! The renderer is deliberately small: axes and ticks are `<line>`/
//! `<text>` elements, every data series is exactly one `<polyline>`, and
//! the legend is a `<g id="legend">` with one `legend-entry` group per
//! series. Charts with a secondary scale carry a `<g id="axis-right">`.

use std::fmt::Write as _;
use std::path::Path;

use crate::diagnostics::{InterpScan, LandscapeSlice};
use crate::error::{Error, Result};
use crate::sweep::LevelMetrics;

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 480.0;
const MARGIN_L: f64 = 72.0;
const MARGIN_R: f64 = 72.0;
const MARGIN_T: f64 = 42.0;
const MARGIN_B: f64 = 58.0;

const BLUE: &str = "#1f77b4";
const RED: &str = "#d62728";
const GREEN: &str = "#2ca02c";
const ORANGE: &str = "#ff7f0e";

#[derive(Debug, Clone)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
    pub color: String,
    pub dashed: bool,
    /// Scale against the right-hand y-axis.
    pub right_axis: bool,
}

#[derive(Debug, Clone)]
pub enum XAxis {
    /// Values are sparsity fractions; drawn as remaining weights on a
    /// log scale with percent tick labels (dense on the left).
    LogRemaining,
    Linear {
        label: String,
    },
}

#[derive(Debug, Clone)]
pub struct Chart {
    pub title: String,
    pub x: XAxis,
    pub y_label: String,
    pub y2_label: Option<String>,
    pub series: Vec<Series>,
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

fn fmt_tick(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    let a = v.abs();
    let s = if a >= 100.0 {
        format!("{v:.0}")
    } else if a >= 1.0 {
        format!("{v:.2}")
    } else {
        format!("{v:.3}")
    };
    let s = s.trim_end_matches('0').trim_end_matches('.').to_string();
    if s.is_empty() || s == "-" {
        "0".into()
    } else {
        s
    }
}

struct Range {
    lo: f64,
    hi: f64,
}

impl Range {
    fn of(values: impl Iterator<Item = f64>) -> Range {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for v in values {
            if v.is_finite() {
                lo = lo.min(v);
                hi = hi.max(v);
            }
        }
        if !lo.is_finite() || !hi.is_finite() {
            return Range { lo: 0.0, hi: 1.0 };
        }
        if hi - lo < 1e-12 {
            let pad = lo.abs().max(1.0) * 0.05;
            return Range {
                lo: lo - pad,
                hi: hi + pad,
            };
        }
        let pad = (hi - lo) * 0.05;
        Range {
            lo: lo - pad,
            hi: hi + pad,
        }
    }

    fn t(&self, v: f64) -> f64 {
        (v - self.lo) / (self.hi - self.lo)
    }
}

/// Render a chart to SVG text.
pub fn render(chart: &Chart) -> Result<String> {
    if chart.series.is_empty() {
        return Err(Error::InvalidConfig("cannot plot an empty chart".into()));
    }
    let plot_w = WIDTH - MARGIN_L - MARGIN_R;
    let plot_h = HEIGHT - MARGIN_T - MARGIN_B;

    // X transform: either log10(remaining) (reversed so dense sits left)
    // or linear in the data.
    let x_of: Box<dyn Fn(f64) -> f64>;
    let x_ticks: Vec<(f64, String)>; // (axis fraction, label)
    let x_label: String;
    match &chart.x {
        XAxis::LogRemaining => {
            let min_rem = chart
                .series
                .iter()
                .flat_map(|s| s.points.iter().map(|&(x, _)| 1.0 - x))
                .fold(1.0f64, f64::min)
                .max(1e-6);
            let log_min = min_rem.log10().min(-0.1);
            x_of = Box::new(move |sparsity: f64| {
                let rem = (1.0 - sparsity).max(1e-6);
                rem.log10() / log_min
            });
            let mut ticks = Vec::new();
            let mut decade = 1.0f64; // 100%
            while decade.log10() >= log_min {
                let frac = decade.log10() / log_min;
                ticks.push((frac, format!("{}%", fmt_tick(decade * 100.0))));
                decade /= 10.0;
            }
            x_ticks = ticks;
            x_label = "remaining weights".into();
        }
        XAxis::Linear { label } => {
            let r = Range::of(
                chart
                    .series
                    .iter()
                    .flat_map(|s| s.points.iter().map(|&(x, _)| x)),
            );
            let (lo, hi) = (r.lo, r.hi);
            x_of = Box::new(move |x: f64| (x - lo) / (hi - lo));
            x_ticks = (0..=4)
                .map(|i| {
                    let t = i as f64 / 4.0;
                    (t, fmt_tick(lo + t * (hi - lo)))
                })
                .collect();
            x_label = label.clone();
        }
    }

    let y_left = Range::of(
        chart
            .series
            .iter()
            .filter(|s| !s.right_axis)
            .flat_map(|s| s.points.iter().map(|&(_, y)| y)),
    );
    let y_right = Range::of(
        chart
            .series
            .iter()
            .filter(|s| s.right_axis)
            .flat_map(|s| s.points.iter().map(|&(_, y)| y)),
    );

    let px = |t: f64| MARGIN_L + t.clamp(0.0, 1.0) * plot_w;
    let py = |t: f64| MARGIN_T + (1.0 - t.clamp(0.0, 1.0)) * plot_h;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    let _ = writeln!(
        svg,
        r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#
    );
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="24" text-anchor="middle" font-family="sans-serif" font-size="15">{}</text>"#,
        WIDTH / 2.0,
        esc(&chart.title)
    );

    // Axes.
    let (x0, x1) = (px(0.0), px(1.0));
    let (y0, y1) = (py(0.0), py(1.0));
    let _ = writeln!(svg, r#"<g id="axis-x" stroke="black" stroke-width="1">"#);
    let _ = writeln!(svg, r#"<line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}"/>"#);
    let _ = writeln!(svg, "</g>");
    let _ = writeln!(svg, r#"<g id="axis-left" stroke="black" stroke-width="1">"#);
    let _ = writeln!(svg, r#"<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}"/>"#);
    let _ = writeln!(svg, "</g>");

    // X ticks.
    for (t, label) in &x_ticks {
        let x = px(*t);
        let _ = writeln!(
            svg,
            r#"<line x1="{x}" y1="{y0}" x2="{x}" y2="{}" stroke="black"/>"#,
            y0 + 5.0
        );
        let _ = writeln!(
            svg,
            r#"<text x="{x}" y="{}" text-anchor="middle" font-family="sans-serif" font-size="11">{}</text>"#,
            y0 + 18.0,
            esc(label)
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" text-anchor="middle" font-family="sans-serif" font-size="12">{}</text>"#,
        (x0 + x1) / 2.0,
        HEIGHT - 14.0,
        esc(&x_label)
    );

    // Left y ticks and label.
    for i in 0..=4 {
        let t = i as f64 / 4.0;
        let y = py(t);
        let v = y_left.lo + t * (y_left.hi - y_left.lo);
        let _ = writeln!(
            svg,
            r#"<line x1="{}" y1="{y}" x2="{x0}" y2="{y}" stroke="black"/>"#,
            x0 - 5.0
        );
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" text-anchor="end" font-family="sans-serif" font-size="11">{}</text>"#,
            x0 - 8.0,
            y + 4.0,
            fmt_tick(v)
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="16" y="{}" text-anchor="middle" font-family="sans-serif" font-size="12" transform="rotate(-90 16 {})">{}</text>"#,
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0,
        esc(&chart.y_label)
    );

    // Right axis (only when a secondary scale exists).
    if let Some(y2_label) = &chart.y2_label {
        let _ = writeln!(
            svg,
            r#"<g id="axis-right" stroke="black" stroke-width="1">"#
        );
        let _ = writeln!(svg, r#"<line x1="{x1}" y1="{y0}" x2="{x1}" y2="{y1}"/>"#);
        let _ = writeln!(svg, "</g>");
        for i in 0..=4 {
            let t = i as f64 / 4.0;
            let y = py(t);
            let v = y_right.lo + t * (y_right.hi - y_right.lo);
            let _ = writeln!(
                svg,
                r#"<line x1="{x1}" y1="{y}" x2="{}" y2="{y}" stroke="black"/>"#,
                x1 + 5.0
            );
            let _ = writeln!(
                svg,
                r#"<text x="{}" y="{}" text-anchor="start" font-family="sans-serif" font-size="11">{}</text>"#,
                x1 + 8.0,
                y + 4.0,
                fmt_tick(v)
            );
        }
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" text-anchor="middle" font-family="sans-serif" font-size="12" transform="rotate(90 {} {})">{}</text>"#,
            WIDTH - 16.0,
            (y0 + y1) / 2.0,
            WIDTH - 16.0,
            (y0 + y1) / 2.0,
            esc(y2_label)
        );
    }

    // Series.
    for s in &chart.series {
        let range = if s.right_axis { &y_right } else { &y_left };
        let mut pts = String::new();
        for &(x, y) in &s.points {
            let _ = write!(pts, "{:.2},{:.2} ", px(x_of(x)), py(range.t(y)));
        }
        let dash = if s.dashed {
            r#" stroke-dasharray="6 3""#
        } else {
            ""
        };
        let _ = writeln!(
            svg,
            r#"<polyline fill="none" stroke="{}" stroke-width="1.6"{} points="{}"/>"#,
            s.color,
            dash,
            pts.trim_end()
        );
    }

    // Legend.
    let _ = writeln!(
        svg,
        r#"<g id="legend" font-family="sans-serif" font-size="11">"#
    );
    for (i, s) in chart.series.iter().enumerate() {
        let ly = MARGIN_T + 8.0 + i as f64 * 16.0;
        let dash = if s.dashed {
            r#" stroke-dasharray="6 3""#
        } else {
            ""
        };
        let _ = writeln!(svg, r#"<g class="legend-entry">"#);
        let _ = writeln!(
            svg,
            r#"<line x1="{}" y1="{ly}" x2="{}" y2="{ly}" stroke="{}" stroke-width="1.6"{}/>"#,
            MARGIN_L + 8.0,
            MARGIN_L + 34.0,
            s.color,
            dash
        );
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}">{}</text>"#,
            MARGIN_L + 40.0,
            ly + 4.0,
            esc(&s.label)
        );
        let _ = writeln!(svg, "</g>");
    }
    let _ = writeln!(svg, "</g>");
    let _ = writeln!(svg, "</svg>");
    Ok(svg)
}

pub fn write_svg(chart: &Chart, path: &Path) -> Result<()> {
    let text = render(chart)?;
    std::fs::write(path, text).map_err(Error::io_at(path))?;
    Ok(())
}

fn sweep_palette(idx: usize) -> (&'static str, &'static str) {
    match idx % 2 {
        0 => (BLUE, RED),
        _ => (GREEN, ORANGE),
    }
}

/// Train + test accuracy against sparsity: two polylines per sweep.
pub fn accuracy_chart(sweeps: &[(String, Vec<LevelMetrics>)]) -> Result<Chart> {
    if sweeps.is_empty() || sweeps.iter().any(|(_, m)| m.is_empty()) {
        return Err(Error::InvalidConfig(
            "accuracy plot needs at least one nonempty sweep".into(),
        ));
    }
    let mut series = Vec::new();
    for (i, (name, metrics)) in sweeps.iter().enumerate() {
        let (train_color, test_color) = sweep_palette(i);
        let train: Vec<(f64, f64)> = metrics
            .iter()
            .map(|m| (m.sparsity.prunable, m.final_train().accuracy))
            .collect();
        let test: Vec<(f64, f64)> = metrics
            .iter()
            .map(|m| (m.sparsity.prunable, m.final_test().accuracy))
            .collect();
        series.push(Series {
            label: format!("{name} train"),
            points: train,
            color: train_color.into(),
            dashed: false,
            right_axis: false,
        });
        series.push(Series {
            label: format!("{name} test"),
            points: test,
            color: test_color.into(),
            dashed: true,
            right_axis: false,
        });
    }
    Ok(Chart {
        title: "accuracy vs sparsity".into(),
        x: XAxis::LogRemaining,
        y_label: "accuracy".into(),
        y2_label: None,
        series,
    })
}

/// Learning distance (left axis) overlaid with test accuracy (right
/// axis) against sparsity.
pub fn distance_chart(metrics: &[LevelMetrics]) -> Result<Chart> {
    if metrics.is_empty() {
        return Err(Error::InvalidConfig(
            "distance plot needs a nonempty sweep".into(),
        ));
    }
    let dist: Vec<(f64, f64)> = metrics
        .iter()
        .map(|m| (m.sparsity.prunable, m.learning_distance))
        .collect();
    let acc: Vec<(f64, f64)> = metrics
        .iter()
        .map(|m| (m.sparsity.prunable, m.final_test().accuracy))
        .collect();
    Ok(Chart {
        title: "learning distance and test accuracy vs sparsity".into(),
        x: XAxis::LogRemaining,
        y_label: "l2 learning distance".into(),
        y2_label: Some("test accuracy".into()),
        series: vec![
            Series {
                label: "learning distance".into(),
                points: dist,
                color: BLUE.into(),
                dashed: false,
                right_axis: false,
            },
            Series {
                label: "test accuracy".into(),
                points: acc,
                color: RED.into(),
                dashed: false,
                right_axis: true,
            },
        ],
    })
}

/// Loss (left, blue) and accuracy (right, red) along the interpolation;
/// solid = train, dashed = test.
pub fn interp_chart(scan: &InterpScan) -> Result<Chart> {
    if scan.alphas.is_empty() {
        return Err(Error::InvalidConfig(
            "interpolation plot needs a nonempty scan".into(),
        ));
    }
    let zip = |f: &dyn Fn(usize) -> f64| -> Vec<(f64, f64)> {
        scan.alphas
            .iter()
            .enumerate()
            .map(|(i, &a)| (a, f(i)))
            .collect()
    };
    Ok(Chart {
        title: "linear interpolation: sparse (0) to re-dense (1)".into(),
        x: XAxis::Linear {
            label: "alpha".into(),
        },
        y_label: "loss".into(),
        y2_label: Some("accuracy".into()),
        series: vec![
            Series {
                label: "train loss".into(),
                points: zip(&|i| scan.train[i].loss),
                color: BLUE.into(),
                dashed: false,
                right_axis: false,
            },
            Series {
                label: "test loss".into(),
                points: zip(&|i| scan.test[i].loss),
                color: BLUE.into(),
                dashed: true,
                right_axis: false,
            },
            Series {
                label: "train accuracy".into(),
                points: zip(&|i| scan.train[i].accuracy),
                color: RED.into(),
                dashed: false,
                right_axis: true,
            },
            Series {
                label: "test accuracy".into(),
                points: zip(&|i| scan.test[i].accuracy),
                color: RED.into(),
                dashed: true,
                right_axis: true,
            },
        ],
    })
}

/// Train loss along filter-normalized direction offsets.
pub fn slice_chart(slices: &[(String, LandscapeSlice)]) -> Result<Chart> {
    if slices.is_empty() {
        return Err(Error::InvalidConfig(
            "slice plot needs at least one slice".into(),
        ));
    }
    let palette = [BLUE, RED, GREEN, ORANGE];
    let series = slices
        .iter()
        .enumerate()
        .map(|(i, (label, s))| Series {
            label: label.clone(),
            points: s
                .offsets
                .iter()
                .copied()
                .zip(s.train_loss.iter().copied())
                .collect(),
            color: palette[i % palette.len()].into(),
            dashed: false,
            right_axis: false,
        })
        .collect();
    Ok(Chart {
        title: "1-D loss slice (filter-normalized direction)".into(),
        x: XAxis::Linear {
            label: "offset".into(),
        },
        y_label: "train loss".into(),
        y2_label: None,
        series,
    })
}
