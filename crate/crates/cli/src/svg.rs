//! Minimal SVG overlays: replicate curves in grey, the observed curve in black
//! and its pointwise band dashed.

use std::fmt::Write;

use jmcheck::gof::{CheckReport, Statistic};

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 55.0;

fn axis_labels(stat: Statistic) -> (&'static str, &'static str) {
    match stat {
        Statistic::EcdfLongitudinal => ("outcome", "eCDF"),
        Statistic::Mean => ("time", "loess mean"),
        Statistic::Variance => ("time", "sqrt |standardized residual|"),
        Statistic::Semivariogram => ("time lag", "semivariance"),
        Statistic::EcdfSurvival => ("time", "event-time CDF"),
        Statistic::Pit => ("u", "CDF of PIT values"),
        Statistic::Concordance => ("time", "concordance"),
    }
}

/// Tick positions at 1, 2 or 5 times a power of ten.
fn ticks(lo: f64, hi: f64) -> Vec<f64> {
    let raw = (hi - lo) / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0]
        .into_iter()
        .map(|m| m * mag)
        .find(|s| *s >= raw)
        .unwrap_or(10.0 * mag);
    let first = (lo / step).ceil() as i64;
    let last = (hi / step).floor() as i64;
    (first..=last).map(|k| k as f64 * step).collect()
}

fn label(v: f64) -> String {
    let s = format!("{v:.4}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" { "0".into() } else { s.to_string() }
}

struct Frame {
    x: (f64, f64),
    y: (f64, f64),
}

impl Frame {
    fn px(&self, x: f64) -> f64 {
        LEFT + (x - self.x.0) / (self.x.1 - self.x.0) * (WIDTH - LEFT - RIGHT)
    }

    fn py(&self, y: f64) -> f64 {
        TOP + (1.0 - (y - self.y.0) / (self.y.1 - self.y.0)) * (HEIGHT - TOP - BOTTOM)
    }

    /// One polyline per run of finite values.
    fn polylines(&self, out: &mut String, class: &str, grid: &[f64], values: &[f64]) {
        let mut points = String::new();
        let mut flush = |points: &mut String| {
            if !points.is_empty() {
                let _ = writeln!(out, r#"<polyline class="{class}" points="{}"/>"#, points.trim_end());
                points.clear();
            }
        };
        for (x, y) in grid.iter().zip(values) {
            if y.is_finite() {
                let _ = write!(points, "{:.2},{:.2} ", self.px(*x), self.py(*y));
            } else {
                flush(&mut points);
            }
        }
        flush(&mut points);
    }
}

fn value_range(report: &CheckReport) -> (f64, f64) {
    let band = report.observed_band.iter().flat_map(|b| b.lower.iter().chain(&b.upper));
    let all = report
        .replicates
        .iter()
        .flat_map(|c| c.values.iter())
        .chain(&report.observed.values)
        .chain(band)
        .copied()
        .filter(|v| v.is_finite());
    let (lo, hi) = all.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        return (lo - 0.5, hi + 0.5);
    }
    let pad = 0.04 * (hi - lo);
    (lo - pad, hi + pad)
}

pub fn render(report: &CheckReport, title: &str) -> String {
    let grid = &report.observed.grid;
    let (x0, x1) = match (grid.first(), grid.last()) {
        (Some(&a), Some(&b)) if b > a => (a, b),
        (Some(&a), _) => (a - 0.5, a + 0.5),
        _ => (0.0, 1.0),
    };
    let frame = Frame {
        x: (x0, x1),
        y: value_range(report),
    };
    let (xlab, ylab) = axis_labels(report.statistic);
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    out.push_str(
        "<style>.replicate{stroke:#b3b3b3;stroke-width:0.8;fill:none}\
         .observed{stroke:#000;stroke-width:1.8;fill:none}\
         .band{stroke:#000;stroke-width:1;stroke-dasharray:5,3;fill:none}\
         .axis{stroke:#000;stroke-width:1}</style>\n",
    );
    let _ = writeln!(out, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(out, r#"<text x="{:.2}" y="22" text-anchor="middle" font-size="14">{}</text>"#, WIDTH / 2.0, escape(title));

    let (bottom, right) = (HEIGHT - BOTTOM, WIDTH - RIGHT);
    let _ = writeln!(out, r#"<line class="axis" x1="{LEFT}" y1="{bottom}" x2="{right}" y2="{bottom}"/>"#);
    let _ = writeln!(out, r#"<line class="axis" x1="{LEFT}" y1="{TOP}" x2="{LEFT}" y2="{bottom}"/>"#);
    for t in ticks(frame.x.0, frame.x.1) {
        let x = frame.px(t);
        let _ = writeln!(out, r#"<line class="axis" x1="{x:.2}" y1="{bottom}" x2="{x:.2}" y2="{:.2}"/>"#, bottom + 5.0);
        let _ = writeln!(out, r#"<text x="{x:.2}" y="{:.2}" text-anchor="middle">{}</text>"#, bottom + 18.0, label(t));
    }
    for t in ticks(frame.y.0, frame.y.1) {
        let y = frame.py(t);
        let _ = writeln!(out, r#"<line class="axis" x1="{:.2}" y1="{y:.2}" x2="{LEFT}" y2="{y:.2}"/>"#, LEFT - 5.0);
        let _ = writeln!(out, r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#, LEFT - 8.0, y + 4.0, label(t));
    }
    let _ = writeln!(out, r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{xlab}</text>"#, (LEFT + right) / 2.0, HEIGHT - 12.0);
    let _ = writeln!(
        out,
        r#"<text transform="translate(16,{:.2}) rotate(-90)" text-anchor="middle">{}</text>"#,
        (TOP + bottom) / 2.0,
        escape(ylab)
    );

    out.push_str("<g>\n");
    for c in &report.replicates {
        frame.polylines(&mut out, "replicate", &c.grid, &c.values);
    }
    if let Some(b) = &report.observed_band {
        frame.polylines(&mut out, "band", grid, &b.lower);
        frame.polylines(&mut out, "band", grid, &b.upper);
    }
    frame.polylines(&mut out, "observed", grid, &report.observed.values);
    out.push_str("</g>\n</svg>\n");
    out
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ticks_are_round_numbers() {
        assert_eq!(ticks(0.0, 1.0), vec![0.0, 0.2, 0.4, 0.6000000000000001, 0.8, 1.0]);
        assert_eq!(ticks(3.0, 37.0), vec![10.0, 20.0, 30.0]);
        assert_eq!(label(0.6000000000000001), "0.6");
    }
}
