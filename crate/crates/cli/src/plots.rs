//! Deterministic SVG renderers for run reports.
//!
//! Everything is emitted with fixed decimal formatting, so the same report
//! always produces byte-identical files. No plotting dependency: the charts
//! here are plain rectangles, polylines and text.

use marginlab_core::metrics::{Histogram, Report};
use ndarray::Array2;

/// Qualitative palette, cycled when there are more than ten classes.
const PALETTE: [&str; 10] = [
    "#4e79a7", "#f28e2b", "#e15759", "#76b7b2", "#59a14f", "#edc948", "#b07aa1", "#ff9da7",
    "#9c755f", "#bab0ac",
];

const FONT: &str = "font-family=\"Helvetica, Arial, sans-serif\"";

pub fn class_color(y: usize) -> &'static str {
    PALETTE[y % PALETTE.len()]
}

/// Escapes text nodes and attribute values.
fn esc(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
        .replace('\'', "&apos;")
}

/// Two-decimal coordinate, enough for pixel positioning.
fn px(v: f64) -> String {
    format!("{v:.2}")
}

/// Axis label: four decimals with trailing zeros trimmed.
fn label(v: f64) -> String {
    let s = format!("{v:.4}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" { "0".to_string() } else { s.to_string() }
}

/// A plot area with the data-to-pixel transform.
struct Frame {
    x: f64,
    y: f64,
    w: f64,
    h: f64,
    x_min: f64,
    x_max: f64,
    y_min: f64,
    y_max: f64,
}

impl Frame {
    fn new(x: f64, y: f64, w: f64, h: f64, x_range: (f64, f64), y_range: (f64, f64)) -> Self {
        // Degenerate ranges get a symmetric pad so the transform stays finite.
        let (mut x_min, mut x_max) = x_range;
        if !(x_max > x_min) {
            x_min -= 0.5;
            x_max += 0.5;
        }
        let (mut y_min, mut y_max) = y_range;
        if !(y_max > y_min) {
            y_min -= 0.5;
            y_max += 0.5;
        }
        Frame { x, y, w, h, x_min, x_max, y_min, y_max }
    }

    fn sx(&self, v: f64) -> f64 {
        self.x + (v - self.x_min) / (self.x_max - self.x_min) * self.w
    }

    fn sy(&self, v: f64) -> f64 {
        self.y + self.h - (v - self.y_min) / (self.y_max - self.y_min) * self.h
    }

    /// Border, corner tick labels and a centred title.
    fn chrome(&self, out: &mut String, title: &str) {
        out.push_str(&format!(
            "<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"#555\" stroke-width=\"1\"/>\n",
            px(self.x), px(self.y), px(self.w), px(self.h)
        ));
        out.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-size=\"11\" text-anchor=\"middle\" {FONT}>{}</text>\n",
            px(self.x + self.w / 2.0), px(self.y - 5.0), esc(title)
        ));
        out.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-size=\"9\" text-anchor=\"start\" {FONT}>{}</text>\n",
            px(self.x), px(self.y + self.h + 12.0), esc(&label(self.x_min))
        ));
        out.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-size=\"9\" text-anchor=\"end\" {FONT}>{}</text>\n",
            px(self.x + self.w), px(self.y + self.h + 12.0), esc(&label(self.x_max))
        ));
        out.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-size=\"9\" text-anchor=\"end\" {FONT}>{}</text>\n",
            px(self.x - 3.0), px(self.y + 8.0), esc(&label(self.y_max))
        ));
        out.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-size=\"9\" text-anchor=\"end\" {FONT}>{}</text>\n",
            px(self.x - 3.0), px(self.y + self.h), esc(&label(self.y_min))
        ));
    }

    fn bars(&self, out: &mut String, hist: &Histogram, color: &str) {
        let bins = hist.counts.len().max(1) as f64;
        let step = (self.x_max - self.x_min) / bins;
        for (i, &count) in hist.counts.iter().enumerate() {
            if count == 0 {
                continue;
            }
            let x0 = self.sx(self.x_min + i as f64 * step);
            let x1 = self.sx(self.x_min + (i as f64 + 1.0) * step);
            let top = self.sy(count as f64);
            let base = self.sy(self.y_min.max(0.0));
            out.push_str(&format!(
                "<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"{color}\" fill-opacity=\"0.8\"/>\n",
                px(x0), px(top), px((x1 - x0).max(0.1)), px((base - top).max(0.0))
            ));
        }
    }

    fn polyline(&self, out: &mut String, points: &[(f64, f64)], color: &str) {
        if points.is_empty() {
            return;
        }
        let coords: Vec<String> =
            points.iter().map(|&(x, y)| format!("{},{}", px(self.sx(x)), px(self.sy(y)))).collect();
        out.push_str(&format!(
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\"/>\n",
            coords.join(" ")
        ));
    }
}

fn document(width: f64, height: f64, body: &str) -> String {
    format!(
        "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n\
         <svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n\
         <rect x=\"0\" y=\"0\" width=\"{w}\" height=\"{h}\" fill=\"#ffffff\"/>\n{body}</svg>\n",
        w = px(width),
        h = px(height),
    )
}

/// Lays out `panels` histograms as small multiples, one per class.
fn histogram_grid(hists: &[Histogram], titles: &[String]) -> String {
    let cols = hists.len().min(4).max(1);
    let rows = hists.len().div_ceil(cols).max(1);
    let (pw, ph, mx, my) = (170.0, 110.0, 45.0, 35.0);
    let width = cols as f64 * (pw + mx) + 15.0;
    let height = rows as f64 * (ph + my) + 15.0;
    let mut body = String::new();
    for (i, hist) in hists.iter().enumerate() {
        let col = (i % cols) as f64;
        let row = (i / cols) as f64;
        let peak = hist.counts.iter().copied().max().unwrap_or(0) as f64;
        let frame = Frame::new(
            mx + col * (pw + mx),
            my + row * (ph + my),
            pw,
            ph,
            (hist.min, hist.max),
            (0.0, peak.max(1.0)),
        );
        frame.bars(&mut body, hist, class_color(i));
        frame.chrome(&mut body, &titles[i]);
    }
    document(width, height, &body)
}

/// Per-class histograms of the logit margins on the eval split.
pub fn margin_histograms_svg(report: &Report) -> String {
    let titles: Vec<String> =
        (0..report.num_classes).map(|y| format!("class {y} margin")).collect();
    histogram_grid(&report.margin_histograms, &titles)
}

/// Per-class histograms of the normalised max intra-class distance.
pub fn intra_class_svg(report: &Report) -> String {
    let titles: Vec<String> =
        (0..report.num_classes).map(|y| format!("class {y} spread")).collect();
    histogram_grid(&report.dmax_histograms, &titles)
}

/// Empirical margin CDFs, one curve per class on shared axes.
pub fn margin_cdf_svg(report: &Report) -> String {
    let (width, height) = (460.0, 300.0);
    let frame_box = (55.0, 35.0, 320.0, 230.0);
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for m in &report.margins {
        for &v in m {
            lo = lo.min(v);
            hi = hi.max(v);
        }
    }
    if !lo.is_finite() {
        lo = 0.0;
        hi = 1.0;
    }
    let frame =
        Frame::new(frame_box.0, frame_box.1, frame_box.2, frame_box.3, (lo, hi), (0.0, 1.0));
    let mut body = String::new();
    for y in 0..report.num_classes {
        let cdf = report.margin_cdf(y);
        // Step extension to the plot edges so every curve spans the frame.
        let mut points = Vec::with_capacity(cdf.len() + 2);
        if let Some(&(first, _)) = cdf.first() {
            points.push((frame.x_min.min(first), 0.0));
        }
        points.extend(cdf.iter().copied());
        if let Some(&(_, last_f)) = cdf.last() {
            points.push((frame.x_max, last_f));
        }
        frame.polyline(&mut body, &points, class_color(y));
        // Legend entry.
        let ly = 40.0 + 14.0 * y as f64;
        body.push_str(&format!(
            "<rect x=\"390\" y=\"{}\" width=\"10\" height=\"10\" fill=\"{}\"/>\n",
            px(ly - 9.0),
            class_color(y)
        ));
        body.push_str(&format!(
            "<text x=\"404\" y=\"{}\" font-size=\"10\" {FONT}>class {y}</text>\n",
            px(ly)
        ));
    }
    frame.chrome(&mut body, "margin CDF per class");
    document(width, height, &body)
}

/// Mean accuracy per head/torso/tail bucket as a bar chart.
pub fn buckets_svg(report: &Report) -> String {
    let (width, height) = (360.0, 260.0);
    let rows = &report.bucket_rows;
    let frame = Frame::new(55.0, 35.0, 260.0, 180.0, (0.0, rows.len().max(1) as f64), (0.0, 1.0));
    let mut body = String::new();
    for (i, row) in rows.iter().enumerate() {
        let x0 = frame.sx(i as f64 + 0.15);
        let x1 = frame.sx(i as f64 + 0.85);
        let top = frame.sy(row.accuracy);
        let base = frame.sy(0.0);
        body.push_str(&format!(
            "<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"{}\" fill-opacity=\"0.85\"/>\n",
            px(x0),
            px(top),
            px(x1 - x0),
            px(base - top),
            class_color(i)
        ));
        body.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-size=\"10\" text-anchor=\"middle\" {FONT}>{}</text>\n",
            px((x0 + x1) / 2.0),
            px(base + 14.0),
            esc(&row.bucket.to_string())
        ));
        body.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-size=\"9\" text-anchor=\"middle\" {FONT}>{}</text>\n",
            px((x0 + x1) / 2.0),
            px(top - 4.0),
            esc(&label(row.accuracy))
        ));
    }
    frame.chrome(&mut body, "accuracy by class-frequency bucket");
    document(width, height, &body)
}

/// Scatter of 2-d embeddings coloured by label. Only valid for `K = 2`.
pub fn embeddings_svg(embeddings: &Array2<f64>, labels: &[usize]) -> String {
    let (width, height) = (420.0, 380.0);
    let mut lo = (f64::INFINITY, f64::INFINITY);
    let mut hi = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for row in embeddings.rows() {
        lo.0 = lo.0.min(row[0]);
        lo.1 = lo.1.min(row[1]);
        hi.0 = hi.0.max(row[0]);
        hi.1 = hi.1.max(row[1]);
    }
    if !lo.0.is_finite() {
        lo = (0.0, 0.0);
        hi = (1.0, 1.0);
    }
    let frame = Frame::new(50.0, 35.0, 330.0, 300.0, (lo.0, hi.0), (lo.1, hi.1));
    let mut body = String::new();
    for (i, row) in embeddings.rows().into_iter().enumerate() {
        body.push_str(&format!(
            "<circle cx=\"{}\" cy=\"{}\" r=\"2\" fill=\"{}\" fill-opacity=\"0.6\"/>\n",
            px(frame.sx(row[0])),
            px(frame.sy(row[1])),
            class_color(labels[i])
        ));
    }
    frame.chrome(&mut body, "eval embeddings");
    document(width, height, &body)
}

/// Two stacked panels over the sweep grid: balanced accuracy and mean
/// intra-class trace variance as functions of the regulariser weight.
pub fn sensitivity_svg(lambdas: &[f64], balanced_acc: &[f64], trace_var: &[f64]) -> String {
    let (width, height) = (460.0, 520.0);
    let x_range = (
        lambdas.iter().copied().fold(f64::INFINITY, f64::min),
        lambdas.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    );
    let x_range = if x_range.0.is_finite() { x_range } else { (0.0, 1.0) };
    let mut body = String::new();
    for (panel, (values, title)) in [
        (balanced_acc, "balanced accuracy vs lambda"),
        (trace_var, "mean trace variance vs lambda"),
    ]
    .into_iter()
    .enumerate()
    {
        let y_lo = values.iter().copied().fold(f64::INFINITY, f64::min);
        let y_hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let y_range = if y_lo.is_finite() { (y_lo, y_hi) } else { (0.0, 1.0) };
        let frame = Frame::new(60.0, 35.0 + panel as f64 * 250.0, 360.0, 190.0, x_range, y_range);
        let points: Vec<(f64, f64)> =
            lambdas.iter().copied().zip(values.iter().copied()).collect();
        frame.polyline(&mut body, &points, PALETTE[panel]);
        for &(x, y) in &points {
            body.push_str(&format!(
                "<circle cx=\"{}\" cy=\"{}\" r=\"3\" fill=\"{}\"/>\n",
                px(frame.sx(x)),
                px(frame.sy(y)),
                PALETTE[panel]
            ));
        }
        frame.chrome(&mut body, title);
    }
    document(width, height, &body)
}
