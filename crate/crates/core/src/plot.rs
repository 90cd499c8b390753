//! Weighted-particle scatter plots over target density contours, as SVG.

use std::fmt::Write as _;

use crate::targets::Density2D;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlotOptions {
    /// Half-width of the square window centered at the origin.
    pub extent: f64,
    pub size_px: f64,
    /// Grid cells per axis for the contour backdrop.
    pub grid: usize,
    /// Contour levels, as log-density drops below the maximum on the grid.
    pub level_drops: [f64; 5],
    pub radius_px: f64,
}

impl Default for PlotOptions {
    fn default() -> Self {
        PlotOptions {
            extent: 6.0,
            size_px: 480.0,
            grid: 160,
            level_drops: [0.5, 1.5, 3.0, 5.0, 8.0],
            radius_px: 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Svg {
    pub text: String,
    pub circles: usize,
    pub contour_paths: usize,
}

/// Weights at or below this fraction of the largest get the coldest color.
const COLD_FRACTION: f64 = 0.1;

/// Maps a normalized weight to an RGB color: dark blue at or below 10% of
/// the maximum, red at the maximum, interpolated in log weight.
pub fn weight_color(log_w_over_max: f64) -> [u8; 3] {
    let t = (1.0 - log_w_over_max / COLD_FRACTION.ln()).clamp(0.0, 1.0);
    let cold = [20.0, 30.0, 140.0];
    let warm = [220.0, 30.0, 30.0];
    [0, 1, 2].map(|i| (cold[i] + t * (warm[i] - cold[i])).round() as u8)
}

/// Line segments of the `level` isoline of `values` on a regular grid, by
/// marching squares. `values[i][j]` sits at `(xs[i], ys[j])`.
pub fn iso_segments(values: &[Vec<f64>], xs: &[f64], ys: &[f64], level: f64) -> Vec<[[f64; 2]; 2]> {
    let mut out = Vec::new();
    let lerp = |a: [f64; 2], va: f64, b: [f64; 2], vb: f64| {
        let t = (level - va) / (vb - va);
        [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])]
    };
    for i in 0..xs.len() - 1 {
        for j in 0..ys.len() - 1 {
            // Corners counter-clockwise from bottom-left.
            let c = [[xs[i], ys[j]], [xs[i + 1], ys[j]], [xs[i + 1], ys[j + 1]], [xs[i], ys[j + 1]]];
            let v = [values[i][j], values[i + 1][j], values[i + 1][j + 1], values[i][j + 1]];
            let mut crossings = Vec::with_capacity(4);
            for e in 0..4 {
                let (a, b) = (e, (e + 1) % 4);
                if (v[a] >= level) != (v[b] >= level) {
                    crossings.push(lerp(c[a], v[a], c[b], v[b]));
                }
            }
            match crossings.len() {
                2 => out.push([crossings[0], crossings[1]]),
                4 => {
                    out.push([crossings[0], crossings[1]]);
                    out.push([crossings[2], crossings[3]]);
                }
                _ => {}
            }
        }
    }
    out
}

/// Renders particles colored by weight over contours of `target`.
pub fn render_svg<D: Density2D>(target: &D, points: &[[f64; 2]], log_w: &[f64], opts: &PlotOptions) -> Svg {
    assert_eq!(points.len(), log_w.len(), "one weight per particle");
    let l = opts.extent;
    let s = opts.size_px;
    let to_px = |p: [f64; 2]| [(p[0] + l) / (2.0 * l) * s, (l - p[1]) / (2.0 * l) * s];

    let n = opts.grid;
    let axis: Vec<f64> = (0..=n).map(|i| -l + 2.0 * l * i as f64 / n as f64).collect();
    let values: Vec<Vec<f64>> = axis.iter().map(|&x| axis.iter().map(|&y| target.log_density([x, y])).collect()).collect();
    let top = values.iter().flatten().cloned().fold(f64::NEG_INFINITY, f64::max);

    let mut text = String::new();
    let _ = writeln!(
        text,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{s}" height="{s}" viewBox="0 0 {s} {s}">"#
    );
    let _ = writeln!(text, r##"<rect width="{s}" height="{s}" fill="#ffffff"/>"##);
    let _ = writeln!(text, r##"<g class="contours" fill="none" stroke="#9a9a9a" stroke-width="0.8">"##);
    let mut contour_paths = 0;
    for drop in opts.level_drops {
        let segs = iso_segments(&values, &axis, &axis, top - drop);
        if segs.is_empty() {
            continue;
        }
        let mut d = String::new();
        for [a, b] in segs {
            let (a, b) = (to_px(a), to_px(b));
            let _ = write!(d, "M{:.1} {:.1}L{:.1} {:.1}", a[0], a[1], b[0], b[1]);
        }
        let _ = writeln!(text, r#"<path d="{d}"/>"#);
        contour_paths += 1;
    }
    text.push_str("</g>\n<g class=\"particles\">\n");
    let max_w = log_w.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    // Heavier particles are drawn last so they stay visible.
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| log_w[a].total_cmp(&log_w[b]));
    for i in order {
        let [r, g, b] = weight_color(log_w[i] - max_w);
        let p = to_px(points[i]);
        let _ = writeln!(
            text,
            r##"<circle cx="{:.2}" cy="{:.2}" r="{}" fill="#{r:02x}{g:02x}{b:02x}"/>"##,
            p[0], p[1], opts.radius_px
        );
    }
    text.push_str("</g>\n</svg>\n");
    Svg {
        text,
        circles: points.len(),
        contour_paths,
    }
}
