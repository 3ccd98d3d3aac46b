//! Self-contained SVG charts: the chi-squared timeline with spike markers,
//! and the per-spike score scatter (both side models over sample index,
//! one panel per side). No external assets, one file per chart.

use std::fmt::Write as _;

use crate::evolution::{EvolutionReport, Side};
use crate::timeline::Chi2Series;

const WIDTH: f64 = 900.0;
const HEIGHT: f64 = 420.0;
const MARGIN_LEFT: f64 = 70.0;
const MARGIN_RIGHT: f64 = 25.0;
const MARGIN_TOP: f64 = 40.0;
const MARGIN_BOTTOM: f64 = 70.0;

struct Scale {
    min: f64,
    max: f64,
    lo_px: f64,
    hi_px: f64,
}

impl Scale {
    fn new(min: f64, max: f64, lo_px: f64, hi_px: f64) -> Scale {
        let pad = (max - min).abs().max(1e-12) * 0.05;
        Scale { min: min - pad, max: max + pad, lo_px, hi_px }
    }

    fn map(&self, v: f64) -> f64 {
        let t = (v - self.min) / (self.max - self.min);
        self.lo_px + t * (self.hi_px - self.lo_px)
    }
}

fn header(out: &mut String, title: &str) {
    let _ = writeln!(
        out,
        r##"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif">"##
    );
    let _ = writeln!(out, r##"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"##);
    let _ = writeln!(
        out,
        r##"<text x="{}" y="24" font-size="16" text-anchor="middle">{}</text>"##,
        WIDTH / 2.0,
        xml_escape(title)
    );
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn axis_ticks(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    (0..=count).map(|i| lo + (hi - lo) * i as f64 / count as f64).collect()
}

/// Line chart of the chi-squared series. Spike months get a filled marker,
/// colored by their confirmation state.
pub fn series_chart(series: &Chi2Series, family: &str, engine_label: &str) -> String {
    let mut out = String::new();
    header(&mut out, &format!("{family}: chi-squared drift, {engine_label} features"));

    let n = series.points.len();
    let max_chi2 = series.points.iter().map(|p| p.chi2).fold(f64::MIN, f64::max);
    let min_chi2 = series.points.iter().map(|p| p.chi2).fold(f64::MAX, f64::min);
    let x = Scale::new(0.0, (n - 1).max(1) as f64, MARGIN_LEFT, WIDTH - MARGIN_RIGHT);
    let y = Scale::new(min_chi2.min(0.0), max_chi2, HEIGHT - MARGIN_BOTTOM, MARGIN_TOP);

    // axes
    let _ = writeln!(
        out,
        r##"<line x1="{l}" y1="{b}" x2="{r}" y2="{b}" stroke="black"/><line x1="{l}" y1="{t}" x2="{l}" y2="{b}" stroke="black"/>"##,
        l = MARGIN_LEFT,
        r = WIDTH - MARGIN_RIGHT,
        t = MARGIN_TOP,
        b = HEIGHT - MARGIN_BOTTOM
    );
    for tick in axis_ticks(y.min, y.max, 5) {
        let py = y.map(tick);
        let _ = writeln!(
            out,
            r##"<line x1="{}" y1="{py}" x2="{}" y2="{py}" stroke="#cccccc"/><text x="{}" y="{}" font-size="11" text-anchor="end">{tick:.3}</text>"##,
            MARGIN_LEFT,
            WIDTH - MARGIN_RIGHT,
            MARGIN_LEFT - 6.0,
            py + 4.0
        );
    }
    // month labels, thinned to at most ~12
    let step = (n / 12).max(1);
    for (i, p) in series.points.iter().enumerate().step_by(step) {
        let px = x.map(i as f64);
        let _ = writeln!(
            out,
            r##"<text x="{px}" y="{}" font-size="11" text-anchor="end" transform="rotate(-45 {px} {})">{}</text>"##,
            HEIGHT - MARGIN_BOTTOM + 16.0,
            HEIGHT - MARGIN_BOTTOM + 16.0,
            p.month
        );
    }

    let path: Vec<String> = series
        .points
        .iter()
        .enumerate()
        .map(|(i, p)| format!("{},{}", x.map(i as f64), y.map(p.chi2)))
        .collect();
    let _ = writeln!(out, r##"<polyline points="{}" fill="none" stroke="#1f77b4" stroke-width="2"/>"##, path.join(" "));

    for (i, p) in series.points.iter().enumerate() {
        if let Some(spike) = series.spikes.iter().find(|s| s.month == p.month) {
            let color = match spike.confirmed {
                crate::evolution::Verdict::Confirmed => "#d62728",
                crate::evolution::Verdict::Rejected => "#7f7f7f",
                crate::evolution::Verdict::Untestable => "#ff7f0e",
            };
            let _ = writeln!(
                out,
                r##"<circle cx="{}" cy="{}" r="6" fill="{color}"/><text x="{}" y="{}" font-size="11" text-anchor="middle">{} ({})</text>"##,
                x.map(i as f64),
                y.map(p.chi2),
                x.map(i as f64),
                y.map(p.chi2) - 10.0,
                p.month,
                spike.confirmed
            );
        } else {
            let _ =
                writeln!(out, r##"<circle cx="{}" cy="{}" r="3" fill="#1f77b4"/>"##, x.map(i as f64), y.map(p.chi2));
        }
    }

    let _ = writeln!(
        out,
        r##"<text x="{}" y="{}" font-size="13" text-anchor="middle">probe month</text>"##,
        (MARGIN_LEFT + WIDTH - MARGIN_RIGHT) / 2.0,
        HEIGHT - 8.0
    );
    let _ = writeln!(
        out,
        r##"<text x="16" y="{}" font-size="13" text-anchor="middle" transform="rotate(-90 16 {})">chi-squared</text>"##,
        HEIGHT / 2.0,
        HEIGHT / 2.0
    );
    out.push_str("</svg>\n");
    out
}

/// Two-panel scatter of LLPO scores at a spike: samples on each side,
/// scored by both side models.
pub fn evolution_chart(report: &EvolutionReport, family: &str) -> String {
    let mut out = String::new();
    header(
        &mut out,
        &format!("{family}: secondary test at {} (E = {:.3}, {})", report.spike_month, report.e, report.verdict),
    );

    let all: Vec<f64> = report
        .scores
        .iter()
        .flat_map(|s| [s.llpo_before_model, s.llpo_after_model])
        .filter(|v| v.is_finite())
        .collect();
    let (min_s, max_s) = all.iter().fold((f64::MAX, f64::MIN), |(lo, hi), &v| (lo.min(v), hi.max(v)));

    let panel_gap = 40.0;
    let panel_width = (WIDTH - MARGIN_LEFT - MARGIN_RIGHT - panel_gap) / 2.0;
    for (panel, side) in [Side::Before, Side::After].into_iter().enumerate() {
        let left = MARGIN_LEFT + panel as f64 * (panel_width + panel_gap);
        let right = left + panel_width;
        let scores: Vec<_> = report.scores.iter().filter(|s| s.side == side).collect();
        let x = Scale::new(0.0, scores.len().saturating_sub(1).max(1) as f64, left, right);
        let y = Scale::new(min_s, max_s, HEIGHT - MARGIN_BOTTOM, MARGIN_TOP + 20.0);

        let _ = writeln!(
            out,
            r##"<line x1="{left}" y1="{b}" x2="{right}" y2="{b}" stroke="black"/><line x1="{left}" y1="{t}" x2="{left}" y2="{b}" stroke="black"/>"##,
            t = MARGIN_TOP + 20.0,
            b = HEIGHT - MARGIN_BOTTOM
        );
        let _ = writeln!(
            out,
            r##"<text x="{}" y="{}" font-size="13" text-anchor="middle">samples {side} spike</text>"##,
            (left + right) / 2.0,
            MARGIN_TOP + 12.0
        );
        for (series_idx, color) in [(0, "#1f77b4"), (1, "#d62728")] {
            let pts: Vec<String> = scores
                .iter()
                .enumerate()
                .map(|(i, s)| {
                    let v = if series_idx == 0 { s.llpo_before_model } else { s.llpo_after_model };
                    format!("{},{}", x.map(i as f64), y.map(v))
                })
                .collect();
            let _ = writeln!(
                out,
                r##"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"##,
                pts.join(" ")
            );
            for (i, s) in scores.iter().enumerate() {
                let v = if series_idx == 0 { s.llpo_before_model } else { s.llpo_after_model };
                let _ = writeln!(out, r##"<circle cx="{}" cy="{}" r="2.5" fill="{color}"/>"##, x.map(i as f64), y.map(v));
            }
        }
        if panel == 0 {
            for tick in axis_ticks(y.min, y.max, 5) {
                let py = y.map(tick);
                let _ = writeln!(
                    out,
                    r##"<text x="{}" y="{}" font-size="11" text-anchor="end">{tick:.3}</text>"##,
                    left - 6.0,
                    py + 4.0
                );
            }
        }
    }

    // legend
    let legend_y = HEIGHT - 28.0;
    let _ = writeln!(
        out,
        r##"<rect x="{l}" y="{y}" width="14" height="4" fill="#1f77b4"/><text x="{}" y="{}" font-size="12">before-side model</text>"##,
        MARGIN_LEFT + 20.0,
        legend_y + 6.0,
        l = MARGIN_LEFT,
        y = legend_y
    );
    let _ = writeln!(
        out,
        r##"<rect x="{l}" y="{y}" width="14" height="4" fill="#d62728"/><text x="{}" y="{}" font-size="12">after-side model</text>"##,
        MARGIN_LEFT + 190.0,
        legend_y + 6.0,
        l = MARGIN_LEFT + 170.0,
        y = legend_y
    );
    let _ = writeln!(
        out,
        r##"<text x="{}" y="{}" font-size="13" text-anchor="middle">sample index (LLPO on the y axis)</text>"##,
        WIDTH / 2.0,
        HEIGHT - 8.0
    );
    out.push_str("</svg>\n");
    out
}
