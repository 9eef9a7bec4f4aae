//! Static SVG of a window's decomposition into spline tokens.
//!
//! Panels, top to bottom: signal with its reconstruction, feature function,
//! clipped mass CDF, basis functions and tokens. Knots are drawn as vertical
//! rules on every panel. Output depends only on the inputs.

use std::fmt::Write as _;

use bsat::knots::mass_profile;
use bsat::spline::{basis_matrix, linspace};
use bsat::tokenizer::{fit_window_full, TokenizerConfig};

use crate::error::Result;

const WIDTH: f64 = 860.0;
const PANEL: f64 = 150.0;
const MARGIN: f64 = 40.0;

struct Panel<'a> {
    title: &'a str,
    /// Series drawn as polylines, `(x in [0,1], y)` points.
    lines: Vec<(Vec<(f64, f64)>, &'a str)>,
    /// Markers drawn as circles.
    dots: Vec<(f64, f64)>,
}

fn bounds(panel: &Panel) -> (f64, f64) {
    let ys = panel
        .lines
        .iter()
        .flat_map(|(pts, _)| pts.iter().map(|p| p.1))
        .chain(panel.dots.iter().map(|p| p.1));
    let (lo, hi) = ys.fold((f64::MAX, f64::MIN), |(lo, hi), y| (lo.min(y), hi.max(y)));
    if !(hi > lo) {
        (lo - 1.0, lo + 1.0)
    } else {
        let pad = 0.05 * (hi - lo);
        (lo - pad, hi + pad)
    }
}

fn render(panels: &[Panel], knots: &[f64]) -> String {
    let plot_w = WIDTH - 2.0 * MARGIN;
    let height = panels.len() as f64 * (PANEL + MARGIN) + MARGIN;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{height}" viewBox="0 0 {WIDTH} {height}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    for (k, panel) in panels.iter().enumerate() {
        let top = MARGIN + k as f64 * (PANEL + MARGIN);
        let (lo, hi) = bounds(panel);
        let px = |x: f64| MARGIN + x * plot_w;
        let py = |y: f64| top + PANEL - (y - lo) / (hi - lo) * PANEL;
        let _ = writeln!(s, r#"<text x="{MARGIN}" y="{:.1}">{}</text>"#, top - 6.0, panel.title);
        let _ = writeln!(
            s,
            r##"<rect x="{MARGIN}" y="{top:.1}" width="{plot_w:.1}" height="{PANEL}" fill="none" stroke="#999"/>"##
        );
        for &t in knots {
            let _ = writeln!(
                s,
                r##"<line x1="{0:.2}" y1="{top:.1}" x2="{0:.2}" y2="{1:.1}" stroke="#ddd"/>"##,
                px(t),
                top + PANEL
            );
        }
        for (pts, color) in &panel.lines {
            let coords: Vec<String> = pts
                .iter()
                .map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y)))
                .collect();
            let _ = writeln!(
                s,
                r#"<polyline fill="none" stroke="{color}" stroke-width="1" points="{}"/>"#,
                coords.join(" ")
            );
        }
        for &(x, y) in &panel.dots {
            let _ = writeln!(
                s,
                r##"<circle cx="{:.2}" cy="{:.2}" r="3" fill="#d62728"/>"##,
                px(x),
                py(y)
            );
        }
    }
    s.push_str("</svg>\n");
    s
}

fn curve(xs: &[f64], ys: &[f64]) -> Vec<(f64, f64)> {
    xs.iter().copied().zip(ys.iter().copied()).collect()
}

/// Decomposition plot of one lookback window.
pub fn decomposition(y: &[f64], config: &TokenizerConfig) -> Result<String> {
    let l = y.len();
    let config = TokenizerConfig { lookback: l, ..*config };
    let fit = fit_window_full(y, &config)?;
    let grid = linspace(0.0, 1.0, l);
    let profile = mass_profile(&grid, y, config.degree, config.budget, config.clip_factor)?;
    let basis = basis_matrix(&grid, &fit.knots)?;
    let cdf_x = linspace(0.0, 1.0, profile.cdf.len());
    let span = (l - 1).max(1) as f64;

    let basis_lines = (0..basis.cols())
        .map(|i| {
            let pts = (0..l)
                .map(|r| (grid[r], basis.get(r, i)))
                .filter(|p| p.1 > 0.0)
                .collect();
            (pts, "#1f77b4")
        })
        .collect();
    let tokens = &fit.tokens;
    let panels = [
        Panel {
            title: "signal and spline reconstruction",
            lines: vec![(curve(&grid, y), "#444"), (curve(&grid, &fit.reconstruction), "#d62728")],
            dots: Vec::new(),
        },
        Panel {
            title: "feature function",
            lines: vec![(curve(&grid, &profile.feature), "#2ca02c")],
            dots: Vec::new(),
        },
        Panel {
            title: "clipped mass CDF and knots",
            lines: vec![(curve(&cdf_x, &profile.cdf), "#9467bd")],
            dots: Vec::new(),
        },
        Panel {
            title: "basis functions",
            lines: basis_lines,
            dots: Vec::new(),
        },
        Panel {
            title: "tokens (coefficient at center)",
            lines: vec![(curve(&grid, y), "#bbb")],
            dots: tokens
                .centers
                .iter()
                .zip(&tokens.coeffs)
                .map(|(&c, &v)| (c / span, v))
                .collect(),
        },
    ];
    Ok(render(&panels, fit.knots.interior()))
}
