//! Histogram emission as CSV and as a self-contained SVG bar chart.

use std::fmt::Write as _;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 360.0;
const MARGIN_LEFT: f64 = 48.0;
const MARGIN_RIGHT: f64 = 16.0;
const MARGIN_TOP: f64 = 28.0;
const MARGIN_BOTTOM: f64 = 36.0;

/// `bin_lo,bin_hi,height` rows for `k` equal bins on `[0, 1]`.
pub fn histogram_csv(heights: &[f64]) -> String {
    let k = heights.len() as f64;
    let mut out = String::from("bin_lo,bin_hi,height\n");
    for (j, h) in heights.iter().enumerate() {
        let _ = writeln!(out, "{},{},{}", j as f64 / k, (j + 1) as f64 / k, h);
    }
    out
}

/// Pixels per unit of density for a chart of these heights.
pub fn svg_scale(heights: &[f64]) -> f64 {
    let top = heights.iter().copied().fold(1.0, f64::max) * 1.1;
    (HEIGHT - MARGIN_TOP - MARGIN_BOTTOM) / top
}

/// Bar chart of the heights with a dashed reference line at density 1.
/// Bars carry `class="bar"`; the root element records the vertical scale in
/// `data-scale` so bar heights can be mapped back to density values.
pub fn histogram_svg(heights: &[f64], title: &str) -> String {
    let plot_w = WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
    let plot_h = HEIGHT - MARGIN_TOP - MARGIN_BOTTOM;
    let base_y = MARGIN_TOP + plot_h;
    let scale = svg_scale(heights);
    let bar_w = plot_w / heights.len().max(1) as f64;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" data-scale="{scale}">"#
    );
    let _ = writeln!(svg, r#"<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="18" font-family="sans-serif" font-size="13" text-anchor="middle">{}</text>"#,
        WIDTH / 2.0,
        escape(title)
    );
    for (j, &h) in heights.iter().enumerate() {
        let bar_h = h * scale;
        let _ = writeln!(
            svg,
            r##"<rect class="bar" x="{:.6}" y="{:.6}" width="{:.6}" height="{:.6}" fill="#4c72b0" stroke="white" stroke-width="0.5"/>"##,
            MARGIN_LEFT + j as f64 * bar_w,
            base_y - bar_h,
            bar_w,
            bar_h
        );
    }
    let ref_y = base_y - scale;
    let _ = writeln!(
        svg,
        r##"<line class="reference" x1="{MARGIN_LEFT}" y1="{ref_y:.6}" x2="{:.6}" y2="{ref_y:.6}" stroke="#c44e52" stroke-dasharray="6 4"/>"##,
        MARGIN_LEFT + plot_w
    );
    let _ = writeln!(
        svg,
        r#"<line x1="{MARGIN_LEFT}" y1="{base_y}" x2="{:.6}" y2="{base_y}" stroke="black"/>"#,
        MARGIN_LEFT + plot_w
    );
    let _ = writeln!(svg, r#"<line x1="{MARGIN_LEFT}" y1="{MARGIN_TOP}" x2="{MARGIN_LEFT}" y2="{base_y}" stroke="black"/>"#);
    for tick in [0.0, 0.25, 0.5, 0.75, 1.0] {
        let _ = writeln!(
            svg,
            r#"<text x="{:.6}" y="{}" font-family="sans-serif" font-size="11" text-anchor="middle">{tick}</text>"#,
            MARGIN_LEFT + tick * plot_w,
            base_y + 16.0
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{ref_y:.6}" font-family="sans-serif" font-size="11" text-anchor="end" dominant-baseline="middle">1</text>"#,
        MARGIN_LEFT - 6.0
    );
    svg.push_str("</svg>\n");
    svg
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}
