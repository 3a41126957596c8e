//! Minimal static SVG line/scatter charts.

use std::fmt::Write as _;

const W: f64 = 720.0;
const H: f64 = 440.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 70.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;

pub const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

#[derive(Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    Left,
    Right,
}

#[derive(Clone, Copy)]
pub enum Style {
    Solid,
    Dashed,
    Dots,
}

struct Series {
    label: String,
    color: String,
    style: Style,
    axis: Axis,
    points: Vec<(f64, f64)>,
}

struct Band {
    color: String,
    axis: Axis,
    lower: Vec<(f64, f64)>,
    upper: Vec<(f64, f64)>,
}

pub struct Chart {
    title: String,
    x_label: String,
    y_label: String,
    y2_label: Option<String>,
    series: Vec<Series>,
    bands: Vec<Band>,
}

fn bounds(values: impl Iterator<Item = f64>) -> Option<(f64, f64)> {
    let (lo, hi) = values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if lo > hi {
        return None;
    }
    if hi - lo < 1e-12 * (1.0 + lo.abs()) {
        let pad = 0.5 * lo.abs().max(1.0);
        return Some((lo - pad, hi + pad));
    }
    let pad = 0.05 * (hi - lo);
    Some((lo - pad, hi + pad))
}

fn fmt_tick(v: f64) -> String {
    let a = v.abs();
    if a != 0.0 && !(1e-3..1e5).contains(&a) {
        format!("{v:.1e}")
    } else if a >= 100.0 || v == v.round() {
        format!("{v:.0}")
    } else {
        let s = format!("{v:.4}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

impl Chart {
    pub fn new(title: &str, x_label: &str, y_label: &str) -> Self {
        Chart {
            title: title.into(),
            x_label: x_label.into(),
            y_label: y_label.into(),
            y2_label: None,
            series: Vec::new(),
            bands: Vec::new(),
        }
    }

    pub fn right_axis(&mut self, label: &str) -> &mut Self {
        self.y2_label = Some(label.into());
        self
    }

    pub fn add(&mut self, label: &str, color: &str, style: Style, axis: Axis, points: Vec<(f64, f64)>) -> &mut Self {
        self.series.push(Series { label: label.into(), color: color.into(), style, axis, points });
        self
    }

    pub fn band(&mut self, color: &str, axis: Axis, lower: Vec<(f64, f64)>, upper: Vec<(f64, f64)>) -> &mut Self {
        self.bands.push(Band { color: color.into(), axis, lower, upper });
        self
    }

    fn y_bounds(&self, axis: Axis) -> Option<(f64, f64)> {
        let from_series = self.series.iter().filter(|s| s.axis == axis).flat_map(|s| s.points.iter().map(|p| p.1));
        let from_bands = self
            .bands
            .iter()
            .filter(|b| b.axis == axis)
            .flat_map(|b| b.lower.iter().chain(&b.upper).map(|p| p.1));
        bounds(from_series.chain(from_bands))
    }

    pub fn render(&self) -> String {
        let x_all = self.series.iter().flat_map(|s| s.points.iter().map(|p| p.0));
        let (x0, x1) = bounds(x_all).unwrap_or((0.0, 1.0));
        let (l0, l1) = self.y_bounds(Axis::Left).unwrap_or((0.0, 1.0));
        let right = self.y_bounds(Axis::Right);
        let pw = W - LEFT - RIGHT;
        let ph = H - TOP - BOTTOM;
        let sx = |x: f64| LEFT + (x - x0) / (x1 - x0) * pw;
        let sy = |y: f64, axis: Axis| {
            let (a, b) = match (axis, right) {
                (Axis::Right, Some(r)) => r,
                _ => (l0, l1),
            };
            TOP + ph - (y - a) / (b - a) * ph
        };

        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
        );
        let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
        let _ = writeln!(s, r#"<text x="{}" y="22" text-anchor="middle" font-size="15">{}</text>"#, W / 2.0, escape(&self.title));
        let _ = writeln!(s, r##"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="#444"/>"##);

        for i in 0..=5 {
            let f = i as f64 / 5.0;
            let x = x0 + f * (x1 - x0);
            let px = sx(x);
            let _ = writeln!(s, r##"<line x1="{px:.1}" y1="{}" x2="{px:.1}" y2="{}" stroke="#444"/>"##, TOP + ph, TOP + ph + 5.0);
            let _ = writeln!(s, r#"<text x="{px:.1}" y="{}" text-anchor="middle">{}</text>"#, TOP + ph + 18.0, fmt_tick(x));
            let y = l0 + f * (l1 - l0);
            let py = sy(y, Axis::Left);
            let _ = writeln!(s, r##"<line x1="{}" y1="{py:.1}" x2="{LEFT}" y2="{py:.1}" stroke="#444"/>"##, LEFT - 5.0);
            let _ = writeln!(s, r##"<line x1="{LEFT}" y1="{py:.1}" x2="{}" y2="{py:.1}" stroke="#eee"/>"##, LEFT + pw);
            let _ = writeln!(s, r#"<text x="{}" y="{:.1}" text-anchor="end">{}</text>"#, LEFT - 8.0, py + 4.0, fmt_tick(y));
            if let Some((r0, r1)) = right {
                let y = r0 + f * (r1 - r0);
                let py = sy(y, Axis::Right);
                let _ = writeln!(s, r##"<line x1="{}" y1="{py:.1}" x2="{}" y2="{py:.1}" stroke="#444"/>"##, LEFT + pw, LEFT + pw + 5.0);
                let _ = writeln!(s, r#"<text x="{}" y="{:.1}">{}</text>"#, LEFT + pw + 8.0, py + 4.0, fmt_tick(y));
            }
        }
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, LEFT + pw / 2.0, H - 10.0, escape(&self.x_label));
        let _ = writeln!(
            s,
            r#"<text transform="translate(16 {}) rotate(-90)" text-anchor="middle">{}</text>"#,
            TOP + ph / 2.0,
            escape(&self.y_label)
        );
        if let (Some(label), Some(_)) = (&self.y2_label, right) {
            let _ = writeln!(
                s,
                r#"<text transform="translate({} {}) rotate(90)" text-anchor="middle">{}</text>"#,
                W - 14.0,
                TOP + ph / 2.0,
                escape(label)
            );
        }

        for b in &self.bands {
            let mut pts: Vec<String> = b.upper.iter().map(|&(x, y)| format!("{:.1},{:.1}", sx(x), sy(y, b.axis))).collect();
            pts.extend(b.lower.iter().rev().map(|&(x, y)| format!("{:.1},{:.1}", sx(x), sy(y, b.axis))));
            let _ = writeln!(s, r#"<polygon points="{}" fill="{}" fill-opacity="0.18" stroke="none"/>"#, pts.join(" "), b.color);
        }
        for (i, se) in self.series.iter().enumerate() {
            let pts: Vec<(f64, f64)> = se
                .points
                .iter()
                .filter(|p| p.0.is_finite() && p.1.is_finite())
                .map(|&(x, y)| (sx(x), sy(y, se.axis)))
                .collect();
            match se.style {
                Style::Dots => {
                    for (x, y) in &pts {
                        let _ = writeln!(s, r#"<circle cx="{x:.1}" cy="{y:.1}" r="2.5" fill="{}" fill-opacity="0.6"/>"#, se.color);
                    }
                }
                Style::Solid | Style::Dashed => {
                    let dash = if matches!(se.style, Style::Dashed) { r#" stroke-dasharray="6 4""# } else { "" };
                    let path: Vec<String> = pts.iter().map(|(x, y)| format!("{x:.1},{y:.1}")).collect();
                    let _ = writeln!(
                        s,
                        r#"<polyline points="{}" fill="none" stroke="{}" stroke-width="1.6"{dash}/>"#,
                        path.join(" "),
                        se.color
                    );
                }
            }
            let ly = TOP + 14.0 + 16.0 * i as f64;
            let lx = LEFT + 12.0;
            let _ = writeln!(s, r#"<rect x="{lx}" y="{}" width="14" height="4" fill="{}"/>"#, ly - 4.0, se.color);
            let _ = writeln!(s, r#"<text x="{}" y="{ly}">{}</text>"#, lx + 20.0, escape(&se.label));
        }
        s.push_str("</svg>\n");
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn renders_all_elements() {
        let mut c = Chart::new("t <1>", "x", "y");
        c.add("a", PALETTE[0], Style::Solid, Axis::Left, vec![(0.0, 1.0), (1.0, 2.0)])
            .add("b", PALETTE[1], Style::Dots, Axis::Left, vec![(0.5, 1.5)])
            .band(PALETTE[0], Axis::Left, vec![(0.0, 0.5), (1.0, 1.5)], vec![(0.0, 1.5), (1.0, 2.5)]);
        let svg = c.render();
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
        assert!(svg.contains("polyline") && svg.contains("circle") && svg.contains("polygon"));
        assert!(svg.contains("t &lt;1&gt;"));
    }

    #[test]
    fn single_point_and_flat_series_render() {
        let mut c = Chart::new("one", "x", "y");
        c.add("a", PALETTE[0], Style::Dots, Axis::Left, vec![(3.0, 2.0)]);
        assert!(!c.render().contains("NaN"));
    }
}
