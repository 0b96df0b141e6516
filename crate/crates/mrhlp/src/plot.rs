//! Dependency-free SVG rendering of a segmentation: one panel per channel
//! with the segments shaded behind the signal, and a bottom panel with the
//! regime probability curves.

use std::fmt::Write as _;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::model::Segmentation;

const WIDTH: f64 = 960.0;
const PANEL_HEIGHT: f64 = 110.0;
const GAP: f64 = 14.0;
const MARGIN_LEFT: f64 = 56.0;
const MARGIN_RIGHT: f64 = 16.0;
const MARGIN_TOP: f64 = 24.0;
const MARGIN_BOTTOM: f64 = 30.0;

/// Fill colors cycled over regimes.
const PALETTE: [&str; 12] = [
    "#4e79a7", "#f28e2b", "#e15759", "#76b7b2", "#59a14f", "#edc948", "#b07aa1", "#ff9da7",
    "#9c755f", "#bab0ac", "#2f4b7c", "#a05195",
];

fn color(k: usize) -> &'static str {
    PALETTE[k % PALETTE.len()]
}

struct Scale {
    lo: f64,
    hi: f64,
    out_lo: f64,
    out_hi: f64,
}

impl Scale {
    fn new(lo: f64, hi: f64, out_lo: f64, out_hi: f64) -> Self {
        let (lo, hi) = if hi > lo { (lo, hi) } else { (lo - 0.5, lo + 0.5) };
        Scale { lo, hi, out_lo, out_hi }
    }

    fn map(&self, v: f64) -> f64 {
        self.out_lo + (v - self.lo) / (self.hi - self.lo) * (self.out_hi - self.out_lo)
    }
}

fn polyline(points: &[(f64, f64)], stroke: &str, width: f64) -> String {
    let coords: Vec<String> = points
        .iter()
        .map(|(x, y)| format!("{x:.2},{y:.2}"))
        .collect();
    format!(
        "  <polyline fill=\"none\" stroke=\"{stroke}\" stroke-width=\"{width}\" points=\"{}\"/>\n",
        coords.join(" ")
    )
}

/// Renders the series channels and the probability trace as a stacked,
/// self-contained SVG 1.1 document. `names` labels the channel panels.
pub fn render_svg(
    t: &[f64],
    y: &DMatrix<f64>,
    names: &[String],
    segmentation: &Segmentation,
) -> Result<String> {
    let n = t.len();
    let d = y.ncols();
    let pi = &segmentation.pi_trace;
    if n == 0 || pi.nrows() != n || y.nrows() != n {
        return Err(Error::DimensionMismatch {
            context: "plot inputs",
            expected: n,
            actual: pi.nrows().min(y.nrows()),
        });
    }
    let k = pi.ncols();
    let panels = d + 1;
    let height = MARGIN_TOP + panels as f64 * (PANEL_HEIGHT + GAP) + MARGIN_BOTTOM;
    let x_scale = Scale::new(t[0], t[n - 1], MARGIN_LEFT, WIDTH - MARGIN_RIGHT);

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"{WIDTH}\" height=\"{height:.0}\" viewBox=\"0 0 {WIDTH} {height:.0}\">"
    );
    svg.push_str("  <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");

    // Segment boundaries at midpoints between samples of different labels.
    let mut boundaries = vec![t[0]];
    for i in 1..n {
        if segmentation.labels[i] != segmentation.labels[i - 1] {
            boundaries.push(0.5 * (t[i - 1] + t[i]));
        }
    }
    boundaries.push(t[n - 1]);
    let run_labels: Vec<usize> = segmentation.runs().iter().map(|&(l, _)| l).collect();

    for panel in 0..panels {
        let top = MARGIN_TOP + panel as f64 * (PANEL_HEIGHT + GAP);
        let bottom = top + PANEL_HEIGHT;

        // Shaded segments behind the curves.
        for (r, window) in boundaries.windows(2).enumerate() {
            let x0 = x_scale.map(window[0]);
            let x1 = x_scale.map(window[1]);
            let _ = writeln!(
                svg,
                "  <rect x=\"{x0:.2}\" y=\"{top:.2}\" width=\"{:.2}\" height=\"{PANEL_HEIGHT}\" fill=\"{}\" fill-opacity=\"0.18\"/>",
                (x1 - x0).max(0.0),
                color(run_labels[r]),
            );
        }
        let _ = writeln!(
            svg,
            "  <rect x=\"{MARGIN_LEFT}\" y=\"{top:.2}\" width=\"{:.2}\" height=\"{PANEL_HEIGHT}\" fill=\"none\" stroke=\"#444\" stroke-width=\"0.8\"/>",
            WIDTH - MARGIN_LEFT - MARGIN_RIGHT
        );

        if panel < d {
            // Channel panel.
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            for i in 0..n {
                lo = lo.min(y[(i, panel)]);
                hi = hi.max(y[(i, panel)]);
            }
            let pad = 0.05 * (hi - lo).max(1e-12);
            let y_scale = Scale::new(lo - pad, hi + pad, bottom, top);
            let points: Vec<(f64, f64)> = (0..n)
                .map(|i| (x_scale.map(t[i]), y_scale.map(y[(i, panel)])))
                .collect();
            svg.push_str(&polyline(&points, "#222", 1.2));
            let name = names.get(panel).cloned().unwrap_or_else(|| format!("y{}", panel + 1));
            let _ = writeln!(
                svg,
                "  <text x=\"{:.2}\" y=\"{:.2}\" font-family=\"sans-serif\" font-size=\"11\" fill=\"#333\">{}</text>",
                MARGIN_LEFT + 4.0,
                top + 13.0,
                name
            );
            let _ = writeln!(
                svg,
                "  <text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"9\" fill=\"#666\">{hi:.3}</text>",
                MARGIN_LEFT - 4.0,
                top + 9.0
            );
            let _ = writeln!(
                svg,
                "  <text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"9\" fill=\"#666\">{lo:.3}</text>",
                MARGIN_LEFT - 4.0,
                bottom
            );
        } else {
            // Probability panel: one curve per regime.
            let y_scale = Scale::new(-0.02, 1.02, bottom, top);
            for r in 0..k {
                let points: Vec<(f64, f64)> = (0..n)
                    .map(|i| (x_scale.map(t[i]), y_scale.map(pi[(i, r)])))
                    .collect();
                svg.push_str(&polyline(&points, color(r), 1.6));
            }
            let _ = writeln!(
                svg,
                "  <text x=\"{:.2}\" y=\"{:.2}\" font-family=\"sans-serif\" font-size=\"11\" fill=\"#333\">regime probabilities</text>",
                MARGIN_LEFT + 4.0,
                top + 13.0
            );
            for r in 0..k {
                let x = MARGIN_LEFT + 160.0 + 64.0 * r as f64;
                let _ = writeln!(
                    svg,
                    "  <rect x=\"{x:.2}\" y=\"{:.2}\" width=\"10\" height=\"10\" fill=\"{}\"/>",
                    top + 5.0,
                    color(r)
                );
                let _ = writeln!(
                    svg,
                    "  <text x=\"{:.2}\" y=\"{:.2}\" font-family=\"sans-serif\" font-size=\"10\" fill=\"#333\">k={}</text>",
                    x + 13.0,
                    top + 14.0,
                    r + 1
                );
            }
            // Time axis under the last panel.
            let _ = writeln!(
                svg,
                "  <text x=\"{MARGIN_LEFT}\" y=\"{:.2}\" font-family=\"sans-serif\" font-size=\"10\" fill=\"#666\">t={:.3}</text>",
                bottom + 16.0,
                t[0]
            );
            let _ = writeln!(
                svg,
                "  <text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"10\" fill=\"#666\">t={:.3}</text>",
                WIDTH - MARGIN_RIGHT,
                bottom + 16.0,
                t[n - 1]
            );
        }
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}
