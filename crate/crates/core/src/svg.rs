//! Spectrum plots as plain SVG text.

use std::fmt::Write;

use crate::ggc::GgcSpectrum;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const MARGIN_LEFT: f64 = 60.0;
const MARGIN_RIGHT: f64 = 20.0;
const MARGIN_TOP: f64 = 30.0;
const MARGIN_BOTTOM: f64 = 50.0;
const TICKS: usize = 5;

pub const COLOR_AB: &str = "#1f77b4";
pub const COLOR_BA: &str = "#d62728";
pub const COLOR_THRESHOLD: &str = "#444444";
pub const COLOR_BAND: &str = "#bbbbbb";

struct Frame {
    x_max: f64,
    y_max: f64,
}

impl Frame {
    fn x(&self, f: f64) -> f64 {
        MARGIN_LEFT + f / self.x_max * (WIDTH - MARGIN_LEFT - MARGIN_RIGHT)
    }

    fn y(&self, v: f64) -> f64 {
        HEIGHT - MARGIN_BOTTOM - v / self.y_max * (HEIGHT - MARGIN_TOP - MARGIN_BOTTOM)
    }
}

fn polyline(out: &mut String, frame: &Frame, freqs: &[f64], values: &[f64], color: &str, dashed: bool) {
    let points: Vec<String> = freqs
        .iter()
        .zip(values)
        .map(|(&f, &v)| format!("{:.2},{:.2}", frame.x(f), frame.y(v)))
        .collect();
    let dash = if dashed { r#" stroke-dasharray="6,4""# } else { "" };
    let _ = writeln!(
        out,
        r#"<polyline fill="none" stroke="{color}" stroke-width="1.5"{dash} points="{}"/>"#,
        points.join(" ")
    );
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Both directional curves, the optional threshold curve, and shaded bands.
pub fn spectrum_svg(title: &str, spec: &GgcSpectrum, threshold: Option<&[f64]>, bands: &[(f64, f64)]) -> String {
    let x_max = spec.freqs.last().copied().filter(|f| *f > 0.0).unwrap_or(1.0);
    let top = spec
        .i_ab
        .iter()
        .chain(&spec.i_ba)
        .chain(threshold.unwrap_or(&[]))
        .fold(0.0f64, |m, &v| m.max(v));
    let frame = Frame {
        x_max,
        y_max: if top > 0.0 { top * 1.05 } else { 1.0 },
    };

    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(out, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    for (i, &(lo, hi)) in bands.iter().enumerate() {
        let (x0, x1) = (frame.x(lo.max(0.0)), frame.x(hi.min(x_max)));
        let _ = writeln!(
            out,
            r#"<rect class="band" x="{x0:.2}" y="{MARGIN_TOP:.2}" width="{:.2}" height="{:.2}" fill="{COLOR_BAND}" fill-opacity="{}"/>"#,
            (x1 - x0).max(0.0),
            HEIGHT - MARGIN_TOP - MARGIN_BOTTOM,
            if i % 2 == 0 { "0.2" } else { "0.4" }
        );
    }

    let (x0, y0) = (frame.x(0.0), frame.y(0.0));
    let _ = writeln!(
        out,
        r#"<path d="M{x0:.2},{MARGIN_TOP:.2} L{x0:.2},{y0:.2} L{:.2},{y0:.2}" stroke="black" fill="none"/>"#,
        frame.x(x_max)
    );
    for i in 0..=TICKS {
        let f = x_max * i as f64 / TICKS as f64;
        let v = frame.y_max * i as f64 / TICKS as f64;
        let (xt, yt) = (frame.x(f), frame.y(v));
        let _ = writeln!(
            out,
            r#"<text x="{xt:.2}" y="{:.2}" text-anchor="middle">{f:.1}</text>"#,
            y0 + 16.0
        );
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{v:.3}</text>"#,
            x0 - 6.0,
            yt + 4.0
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">Frequency (Hz)</text>"#,
        (x0 + frame.x(x_max)) / 2.0,
        HEIGHT - 12.0
    );
    let _ = writeln!(
        out,
        r#"<text x="{:.2}" y="18" text-anchor="middle">{}</text>"#,
        WIDTH / 2.0,
        escape(title)
    );

    polyline(&mut out, &frame, &spec.freqs, &spec.i_ab, COLOR_AB, false);
    polyline(&mut out, &frame, &spec.freqs, &spec.i_ba, COLOR_BA, false);
    if let Some(q) = threshold {
        polyline(&mut out, &frame, &spec.freqs, q, COLOR_THRESHOLD, true);
    }

    let legend = [("A to B", COLOR_AB), ("B to A", COLOR_BA), ("99th percentile null", COLOR_THRESHOLD)];
    for (i, (label, color)) in legend.iter().enumerate().take(if threshold.is_some() { 3 } else { 2 }) {
        let y = MARGIN_TOP + 12.0 + 16.0 * i as f64;
        let x = WIDTH - MARGIN_RIGHT - 150.0;
        let _ = writeln!(
            out,
            r#"<line x1="{x:.2}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="{color}" stroke-width="2"/><text x="{:.2}" y="{:.2}">{label}</text>"#,
            x + 20.0,
            x + 26.0,
            y + 4.0
        );
    }
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec() -> GgcSpectrum {
        let freqs: Vec<f64> = (0..=10).map(|i| i as f64 * 0.5).collect();
        GgcSpectrum {
            i_ab: freqs.iter().map(|f| 0.1 * f).collect(),
            i_ba: freqs.iter().map(|_| 0.05).collect(),
            freqs,
        }
    }

    #[test]
    fn contains_every_layer() {
        let s = spec();
        let q = vec![0.2; s.freqs.len()];
        let svg = spectrum_svg("d01 <pair>", &s, Some(&q), &[(1.0, 3.0)]);
        assert!(svg.starts_with("<svg") && svg.ends_with("</svg>\n"));
        assert_eq!(svg.matches("<polyline").count(), 3);
        assert_eq!(svg.matches(r#"class="band""#).count(), 1);
        assert!(svg.contains("d01 &lt;pair&gt;"));
        assert!(svg.contains(COLOR_THRESHOLD));
        // 11 points per curve.
        let first = svg.lines().find(|l| l.starts_with("<polyline")).unwrap();
        assert_eq!(first.matches(',').count(), 11);
    }

    #[test]
    fn deterministic_and_threshold_optional() {
        let s = spec();
        let a = spectrum_svg("x", &s, None, &[]);
        assert_eq!(a, spectrum_svg("x", &s, None, &[]));
        assert_eq!(a.matches("<polyline").count(), 2);
        assert!(!a.contains("null"));
    }

    #[test]
    fn flat_zero_spectrum_still_renders() {
        let s = GgcSpectrum {
            freqs: vec![0.0, 1.0],
            i_ab: vec![0.0, 0.0],
            i_ba: vec![0.0, 0.0],
        };
        let svg = spectrum_svg("z", &s, None, &[]);
        assert!(!svg.contains("NaN") && !svg.contains("inf"));
    }
}
