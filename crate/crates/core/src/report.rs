//! Tabular and graphical artifacts: CSV writers with a stable column order
//! and round-trip float formatting, and a minimal SVG renderer for scatter
//! and line plots of plot-ready CSV data.

use std::path::Path;

use ndarray::prelude::*;

use crate::error::{Error, Result};
use crate::experiments::{ReplicateRow, SelectionRow, SweepRow};
use crate::schemes::Mode;

/// Shortest decimal form that parses back to the identical f64. NaN marks a
/// missing value and becomes the empty field.
fn number(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else {
        format!("{v}")
    }
}

fn opt_number(v: Option<f64>) -> String {
    v.map_or_else(String::new, number)
}

fn mode_label(mode: Mode) -> &'static str {
    match mode {
        Mode::Joint => "joint",
        Mode::Pointwise => "pointwise",
    }
}

fn write_rows<I>(header: &[&str], rows: I) -> String
where
    I: IntoIterator<Item = Vec<String>>,
{
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for row in rows {
        w.write_record(&row).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf8 output")
}

fn selection_fields(row: &SelectionRow) -> Vec<String> {
    vec![
        number(row.alpha),
        row.scheme.kind.describe(),
        mode_label(row.scheme.mode).to_string(),
        row.t.to_string(),
        opt_number(row.adverse_prob),
        opt_number(row.mean),
        opt_number(row.sd),
        opt_number(row.q01),
        opt_number(row.q99),
        row.error.clone().unwrap_or_default(),
    ]
}

const SELECTION_HEADER: [&str; 10] =
    ["alpha", "scheme", "mode", "t", "adverse_prob", "mean", "sd", "q01", "q99", "error"];

/// Summary table: one row per (alpha, scheme) cell.
pub fn selection_csv(rows: &[SelectionRow]) -> String {
    write_rows(&SELECTION_HEADER, rows.iter().map(selection_fields))
}

/// Per-replicate table from full posterior runs.
pub fn replicate_csv(rows: &[ReplicateRow]) -> String {
    write_rows(
        &[
            "replicate",
            "alpha",
            "variant",
            "stat_joint",
            "stat_pointwise",
            "elpd_joint_true",
            "elpd_pointwise_true",
        ],
        rows.iter().map(|r| {
            vec![
                r.replicate.to_string(),
                number(r.alpha),
                r.variant.label().to_string(),
                number(r.stat_joint),
                number(r.stat_pointwise),
                number(r.elpd_joint_true),
                number(r.elpd_pointwise_true),
            ]
        }),
    )
}

/// Sweep table: the summary columns prefixed by the axis coordinate.
pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut header = vec!["axis", "value"];
    header.extend_from_slice(&SELECTION_HEADER);
    write_rows(
        &header,
        rows.iter().map(|r| {
            let mut fields = vec![r.axis.label().to_string(), number(r.value)];
            fields.extend(selection_fields(&r.row));
            fields
        }),
    )
}

/// Covariate design with columns z1..zq, persisted so a run's inputs can be
/// reproduced exactly.
pub fn design_csv(z: &Array2<f64>) -> String {
    let header: Vec<String> = (1..=z.ncols()).map(|j| format!("z{j}")).collect();
    let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
    write_rows(&header_refs, z.rows().into_iter().map(|row| row.iter().map(|&v| number(v)).collect()))
}

/// Plot family rendered by `render_plot`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlotKind {
    Scatter,
    Line,
}

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 480.0;
const MARGIN_LEFT: f64 = 70.0;
const MARGIN_RIGHT: f64 = 20.0;
const MARGIN_TOP: f64 = 24.0;
const MARGIN_BOTTOM: f64 = 50.0;

/// First two numeric columns of the CSV, with the header names as axis
/// labels. Rows whose leading fields do not parse as numbers are skipped.
fn parse_xy(csv_text: &str) -> (String, String, Vec<(f64, f64)>) {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(csv_text.as_bytes());
    let (mut xlabel, mut ylabel) = (String::from("x"), String::from("y"));
    if let Ok(headers) = reader.headers() {
        if let Some(h) = headers.get(0) {
            if !h.is_empty() {
                xlabel = h.to_string();
            }
        }
        if let Some(h) = headers.get(1) {
            if !h.is_empty() {
                ylabel = h.to_string();
            }
        }
    }
    let mut points = Vec::new();
    for record in reader.records().flatten() {
        let x = record.get(0).and_then(|f| f.trim().parse::<f64>().ok());
        let y = record.get(1).and_then(|f| f.trim().parse::<f64>().ok());
        if let (Some(x), Some(y)) = (x, y) {
            if x.is_finite() && y.is_finite() {
                points.push((x, y));
            }
        }
    }
    (xlabel, ylabel, points)
}

/// Smallest padded interval covering the values; a unit interval when there
/// are none, a symmetric one when they are all equal.
fn padded_range<I: Iterator<Item = f64>>(vals: I) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for v in vals {
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

struct Frame {
    x_min: f64,
    x_max: f64,
    y_min: f64,
    y_max: f64,
}

impl Frame {
    fn px(&self, x: f64) -> f64 {
        MARGIN_LEFT + (x - self.x_min) / (self.x_max - self.x_min) * self.plot_width()
    }

    fn py(&self, y: f64) -> f64 {
        MARGIN_TOP + (self.y_max - y) / (self.y_max - self.y_min) * self.plot_height()
    }

    fn plot_width(&self) -> f64 {
        WIDTH - MARGIN_LEFT - MARGIN_RIGHT
    }

    fn plot_height(&self) -> f64 {
        HEIGHT - MARGIN_TOP - MARGIN_BOTTOM
    }
}

fn quadrant_class(x: f64, y: f64) -> &'static str {
    match (x >= 0.0, y >= 0.0) {
        (true, true) => "q1",
        (false, true) => "q2",
        (false, false) => "q3",
        (true, false) => "q4",
    }
}

/// Render the first two CSV columns as a minimal SVG plot: frame, zero
/// lines, extreme tick labels, a legend line, and either one circle per
/// point or a single polyline through the points in row order. Scatter
/// plots shade the half-planes where either coordinate is negative, the
/// region in which a selection statistic favors the worse model.
pub fn render_plot(csv_text: &str, kind: PlotKind) -> String {
    let (xlabel, ylabel, points) = parse_xy(csv_text);
    let (x_min, x_max) = padded_range(points.iter().map(|p| p.0));
    let (y_min, y_max) = padded_range(points.iter().map(|p| p.1));
    let frame = Frame { x_min, x_max, y_min, y_max };

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\">\n"
    ));
    svg.push_str(&format!(
        "  <rect x=\"0\" y=\"0\" width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"#ffffff\"/>\n"
    ));

    let left = MARGIN_LEFT;
    let right = WIDTH - MARGIN_RIGHT;
    let top = MARGIN_TOP;
    let bottom = HEIGHT - MARGIN_BOTTOM;

    if kind == PlotKind::Scatter {
        if x_min < 0.0 && x_max > 0.0 {
            let x0 = frame.px(0.0);
            svg.push_str(&format!(
                "  <rect class=\"adverse\" x=\"{left:.2}\" y=\"{top:.2}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"#f6dcdc\" fill-opacity=\"0.6\"/>\n",
                x0 - left,
                bottom - top
            ));
        }
        if y_min < 0.0 && y_max > 0.0 {
            let y0 = frame.py(0.0);
            svg.push_str(&format!(
                "  <rect class=\"adverse\" x=\"{left:.2}\" y=\"{y0:.2}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"#f6dcdc\" fill-opacity=\"0.6\"/>\n",
                right - left,
                bottom - y0
            ));
        }
    }

    svg.push_str(&format!(
        "  <rect class=\"frame\" x=\"{left:.2}\" y=\"{top:.2}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"none\" stroke=\"#222222\"/>\n",
        right - left,
        bottom - top
    ));
    if x_min < 0.0 && x_max > 0.0 {
        let x0 = frame.px(0.0);
        svg.push_str(&format!(
            "  <line class=\"zero\" x1=\"{x0:.2}\" y1=\"{top:.2}\" x2=\"{x0:.2}\" y2=\"{bottom:.2}\" stroke=\"#888888\" stroke-dasharray=\"4 3\"/>\n"
        ));
    }
    if y_min < 0.0 && y_max > 0.0 {
        let y0 = frame.py(0.0);
        svg.push_str(&format!(
            "  <line class=\"zero\" x1=\"{left:.2}\" y1=\"{y0:.2}\" x2=\"{right:.2}\" y2=\"{y0:.2}\" stroke=\"#888888\" stroke-dasharray=\"4 3\"/>\n"
        ));
    }

    let text_bottom = HEIGHT - 14.0;
    svg.push_str(&format!(
        "  <text x=\"{left:.2}\" y=\"{:.2}\" font-size=\"11\">{:.4}</text>\n",
        bottom + 16.0,
        x_min
    ));
    svg.push_str(&format!(
        "  <text x=\"{:.2}\" y=\"{:.2}\" font-size=\"11\" text-anchor=\"end\">{:.4}</text>\n",
        right,
        bottom + 16.0,
        x_max
    ));
    svg.push_str(&format!(
        "  <text x=\"{:.2}\" y=\"{:.2}\" font-size=\"11\" text-anchor=\"end\">{:.4}</text>\n",
        left - 6.0,
        bottom,
        y_min
    ));
    svg.push_str(&format!(
        "  <text x=\"{:.2}\" y=\"{:.2}\" font-size=\"11\" text-anchor=\"end\">{:.4}</text>\n",
        left - 6.0,
        top + 10.0,
        y_max
    ));
    svg.push_str(&format!(
        "  <text class=\"axis-x\" x=\"{:.2}\" y=\"{text_bottom:.2}\" font-size=\"12\" text-anchor=\"middle\">{}</text>\n",
        0.5 * (left + right),
        escape_text(&xlabel)
    ));
    svg.push_str(&format!(
        "  <text class=\"axis-y\" x=\"{:.2}\" y=\"{:.2}\" font-size=\"12\">{}</text>\n",
        8.0,
        top - 8.0,
        escape_text(&ylabel)
    ));
    let kind_name = match kind {
        PlotKind::Scatter => "scatter",
        PlotKind::Line => "line",
    };
    svg.push_str(&format!(
        "  <text class=\"legend\" x=\"{:.2}\" y=\"{:.2}\" font-size=\"12\" text-anchor=\"end\">{kind_name}, {} points</text>\n",
        right,
        top - 8.0,
        points.len()
    ));

    match kind {
        PlotKind::Scatter => {
            for &(x, y) in &points {
                svg.push_str(&format!(
                    "  <circle class=\"{}\" cx=\"{:.2}\" cy=\"{:.2}\" r=\"3\" fill=\"#1f6feb\" fill-opacity=\"0.7\"/>\n",
                    quadrant_class(x, y),
                    frame.px(x),
                    frame.py(y)
                ));
            }
        }
        PlotKind::Line => {
            if !points.is_empty() {
                let coords: Vec<String> = points
                    .iter()
                    .map(|&(x, y)| format!("{:.2},{:.2}", frame.px(x), frame.py(y)))
                    .collect();
                svg.push_str(&format!(
                    "  <polyline points=\"{}\" fill=\"none\" stroke=\"#1f6feb\" stroke-width=\"1.5\"/>\n",
                    coords.join(" ")
                ));
            }
        }
    }
    svg.push_str("</svg>\n");
    svg
}

fn escape_text(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Render and write the SVG. An unwritable path is reported as an invalid
/// argument.
pub fn emit_plot(csv_text: &str, kind: PlotKind, out_path: &Path) -> Result<()> {
    let svg = render_plot(csv_text, kind);
    std::fs::write(out_path, svg)
        .map_err(|e| Error::invalid(format!("cannot write {}: {e}", out_path.display())))
}
