//! Static SVG charts: mean perturbation curves and bar summaries.

use std::fmt::Write;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const MARGIN: f64 = 56.0;
const PALETTE: [&str; 8] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn header(title: &str) -> String {
    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" font-family=\"sans-serif\" font-size=\"12\">\n"
    );
    let _ = writeln!(svg, "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>");
    let _ = writeln!(
        svg,
        "<text x=\"{}\" y=\"24\" text-anchor=\"middle\" font-size=\"15\">{}</text>",
        WIDTH / 2.0,
        escape(title)
    );
    svg
}

fn axes(svg: &mut String, y_max: f64) {
    let (x0, y0, x1, y1) = (MARGIN, HEIGHT - MARGIN, WIDTH - MARGIN, MARGIN);
    let _ = writeln!(svg, "<line x1=\"{x0}\" y1=\"{y0}\" x2=\"{x1}\" y2=\"{y0}\" stroke=\"black\"/>");
    let _ = writeln!(svg, "<line x1=\"{x0}\" y1=\"{y0}\" x2=\"{x0}\" y2=\"{y1}\" stroke=\"black\"/>");
    for i in 0..=4 {
        let v = y_max * i as f64 / 4.0;
        let y = y0 - (y0 - y1) * i as f64 / 4.0;
        let _ = writeln!(
            svg,
            "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{v:.2}</text>",
            x0 - 6.0,
            y + 4.0
        );
    }
}

/// Linear interpolation of a curve with increasing x onto `n + 1` evenly
/// spaced points in `[0, 1]`.
pub fn resample(points: &[(f64, f64)], n: usize) -> Vec<f64> {
    (0..=n)
        .map(|i| {
            let x = i as f64 / n as f64;
            match points.iter().position(|p| p.0 >= x) {
                None => points.last().map_or(0.0, |p| p.1),
                Some(0) => points[0].1,
                Some(j) => {
                    let (a, b) = (points[j - 1], points[j]);
                    if b.0 == a.0 {
                        b.1
                    } else {
                        a.1 + (b.1 - a.1) * (x - a.0) / (b.0 - a.0)
                    }
                }
            }
        })
        .collect()
}

/// One polyline per series over `x ∈ [0, 1]`.
pub fn line_chart(title: &str, x_label: &str, series: &[(String, Vec<(f64, f64)>)]) -> String {
    let y_max = series
        .iter()
        .flat_map(|s| s.1.iter().map(|p| p.1))
        .fold(1.0f64, f64::max);
    let mut svg = header(title);
    axes(&mut svg, y_max);
    let (x0, y0) = (MARGIN, HEIGHT - MARGIN);
    let (w, h) = (WIDTH - 2.0 * MARGIN, HEIGHT - 2.0 * MARGIN);
    let _ = writeln!(
        svg,
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>",
        WIDTH / 2.0,
        HEIGHT - 16.0,
        escape(x_label)
    );
    for (k, (name, points)) in series.iter().enumerate() {
        let colour = PALETTE[k % PALETTE.len()];
        let coords: Vec<String> = points
            .iter()
            .map(|(x, y)| format!("{:.2},{:.2}", x0 + x * w, y0 - y / y_max * h))
            .collect();
        let _ = writeln!(
            svg,
            "<polyline fill=\"none\" stroke=\"{colour}\" stroke-width=\"2\" points=\"{}\"/>",
            coords.join(" ")
        );
        let ly = MARGIN + 16.0 * k as f64;
        let _ = writeln!(
            svg,
            "<text x=\"{}\" y=\"{ly}\" fill=\"{colour}\" text-anchor=\"end\">{}</text>",
            WIDTH - MARGIN - 4.0,
            escape(name)
        );
    }
    svg.push_str("</svg>\n");
    svg
}

/// Vertical bars with optional ± whiskers.
pub fn bar_chart(title: &str, bars: &[(String, f64, Option<f64>)]) -> String {
    let y_max = bars
        .iter()
        .map(|b| b.1 + b.2.unwrap_or(0.0))
        .fold(f64::MIN_POSITIVE, f64::max);
    let mut svg = header(title);
    axes(&mut svg, y_max);
    let y0 = HEIGHT - MARGIN;
    let h = HEIGHT - 2.0 * MARGIN;
    let slot = (WIDTH - 2.0 * MARGIN) / bars.len().max(1) as f64;
    for (k, (name, value, spread)) in bars.iter().enumerate() {
        let colour = PALETTE[k % PALETTE.len()];
        let x = MARGIN + slot * k as f64 + slot * 0.15;
        let bw = slot * 0.7;
        let top = y0 - value.max(0.0) / y_max * h;
        let _ = writeln!(
            svg,
            "<rect x=\"{x:.2}\" y=\"{top:.2}\" width=\"{bw:.2}\" height=\"{:.2}\" fill=\"{colour}\"/>",
            y0 - top
        );
        if let Some(s) = spread {
            let cx = x + bw / 2.0;
            let lo = y0 - (value - s).max(0.0) / y_max * h;
            let hi = y0 - (value + s) / y_max * h;
            let _ = writeln!(svg, "<line x1=\"{cx:.2}\" y1=\"{lo:.2}\" x2=\"{cx:.2}\" y2=\"{hi:.2}\" stroke=\"black\"/>");
        }
        let _ = writeln!(
            svg,
            "<text x=\"{:.2}\" y=\"{}\" text-anchor=\"middle\">{}</text>",
            x + bw / 2.0,
            y0 + 16.0,
            escape(name)
        );
    }
    svg.push_str("</svg>\n");
    svg
}
