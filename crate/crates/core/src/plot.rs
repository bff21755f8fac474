//! Minimal SVG plot writer: line and scatter series, dotted vertical
//! markers and arrows, on linear axes.

use std::fmt::Write as _;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 480.0;
const MARGIN: f64 = 60.0;
const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SeriesKind {
    Line,
    Scatter,
}

#[derive(Debug, Clone)]
pub struct Series {
    pub label: String,
    pub kind: SeriesKind,
    pub points: Vec<(f64, f64)>,
}

impl Series {
    pub fn line(label: &str, points: Vec<(f64, f64)>) -> Self {
        Series {
            label: label.to_string(),
            kind: SeriesKind::Line,
            points,
        }
    }

    pub fn scatter(label: &str, points: Vec<(f64, f64)>) -> Self {
        Series {
            label: label.to_string(),
            kind: SeriesKind::Scatter,
            points,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Arrow {
    pub from: (f64, f64),
    pub to: (f64, f64),
}

#[derive(Debug, Clone)]
pub struct LinePlot {
    title: String,
    x_label: String,
    y_label: String,
    series: Vec<Series>,
    markers: Vec<(f64, String)>,
    arrows: Vec<Arrow>,
    equal_aspect: bool,
}

impl LinePlot {
    pub fn new(title: &str, x_label: &str, y_label: &str) -> Self {
        LinePlot {
            title: title.to_string(),
            x_label: x_label.to_string(),
            y_label: y_label.to_string(),
            series: Vec::new(),
            markers: Vec::new(),
            arrows: Vec::new(),
            equal_aspect: false,
        }
    }

    pub fn add_series(&mut self, s: Series) {
        self.series.push(s);
    }

    pub fn add_vertical_marker(&mut self, x: f64, label: &str) {
        self.markers.push((x, label.to_string()));
    }

    pub fn add_arrow(&mut self, arrow: Arrow) {
        self.arrows.push(arrow);
    }

    /// Use the same scale on both axes (for maps and trajectories).
    pub fn equal_aspect(&mut self, on: bool) {
        self.equal_aspect = on;
    }

    fn bounds(&self) -> (f64, f64, f64, f64) {
        let xs = self
            .series
            .iter()
            .flat_map(|s| s.points.iter().map(|p| p.0))
            .chain(self.markers.iter().map(|m| m.0))
            .chain(self.arrows.iter().flat_map(|a| [a.from.0, a.to.0]));
        let ys = self
            .series
            .iter()
            .flat_map(|s| s.points.iter().map(|p| p.1))
            .chain(self.arrows.iter().flat_map(|a| [a.from.1, a.to.1]));
        let (mut x0, mut x1) = min_max(xs);
        let (mut y0, mut y1) = min_max(ys);
        if x1 - x0 < 1e-12 {
            x0 -= 0.5;
            x1 += 0.5;
        }
        if y1 - y0 < 1e-12 {
            y0 -= 0.5;
            y1 += 0.5;
        }
        if self.equal_aspect {
            let span = (x1 - x0).max(y1 - y0);
            let (cx, cy) = ((x0 + x1) / 2.0, (y0 + y1) / 2.0);
            (cx - span / 2.0, cx + span / 2.0, cy - span / 2.0, cy + span / 2.0)
        } else {
            (x0, x1, y0, y1)
        }
    }

    pub fn to_svg(&self) -> String {
        let (x0, x1, y0, y1) = self.bounds();
        let plot_w = WIDTH - 2.0 * MARGIN;
        let plot_h = HEIGHT - 2.0 * MARGIN;
        let sx = |x: f64| MARGIN + (x - x0) / (x1 - x0) * plot_w;
        let sy = |y: f64| HEIGHT - MARGIN - (y - y0) / (y1 - y0) * plot_h;

        let mut out = String::new();
        let _ = writeln!(
            out,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
        );
        let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
        let _ = writeln!(
            out,
            r#"<defs><marker id="head" markerWidth="8" markerHeight="6" refX="8" refY="3" orient="auto"><path d="M0,0 L8,3 L0,6 z" fill="black"/></marker></defs>"#
        );
        let _ = writeln!(
            out,
            r#"<rect x="{MARGIN}" y="{MARGIN}" width="{plot_w}" height="{plot_h}" fill="none" stroke="black"/>"#
        );
        let _ = writeln!(out, r#"<text x="{}" y="30" text-anchor="middle" font-size="16">{}</text>"#, WIDTH / 2.0, escape(&self.title));
        let _ = writeln!(out, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, WIDTH / 2.0, HEIGHT - 15.0, escape(&self.x_label));
        let _ = writeln!(
            out,
            r#"<text x="15" y="{}" text-anchor="middle" transform="rotate(-90 15 {})">{}</text>"#,
            HEIGHT / 2.0,
            HEIGHT / 2.0,
            escape(&self.y_label)
        );
        for i in 0..=4 {
            let t = i as f64 / 4.0;
            let xv = x0 + t * (x1 - x0);
            let yv = y0 + t * (y1 - y0);
            let _ = writeln!(out, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#, sx(xv), HEIGHT - MARGIN + 16.0, tick(xv));
            let _ = writeln!(out, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#, MARGIN - 6.0, sy(yv) + 4.0, tick(yv));
        }

        for (k, s) in self.series.iter().enumerate() {
            let color = PALETTE[k % PALETTE.len()];
            match s.kind {
                SeriesKind::Line => {
                    let pts: Vec<String> = s.points.iter().map(|(x, y)| format!("{:.2},{:.2}", sx(*x), sy(*y))).collect();
                    let _ = writeln!(out, r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#, pts.join(" "));
                }
                SeriesKind::Scatter => {
                    for (x, y) in &s.points {
                        let _ = writeln!(out, r#"<circle cx="{:.2}" cy="{:.2}" r="2" fill="{color}"/>"#, sx(*x), sy(*y));
                    }
                }
            }
            let _ = writeln!(
                out,
                r#"<text x="{:.1}" y="{:.1}" fill="{color}">{}</text>"#,
                WIDTH - MARGIN - 120.0,
                MARGIN + 16.0 * (k as f64 + 1.0),
                escape(&s.label)
            );
        }
        for (x, label) in &self.markers {
            let _ = writeln!(
                out,
                r#"<line x1="{0:.2}" y1="{1}" x2="{0:.2}" y2="{2}" stroke="black" stroke-dasharray="2,3"/>"#,
                sx(*x),
                MARGIN,
                HEIGHT - MARGIN
            );
            let _ = writeln!(out, r#"<text x="{:.2}" y="{}">{} {}</text>"#, sx(*x) + 4.0, MARGIN + 14.0, escape(label), tick(*x));
        }
        for a in &self.arrows {
            let _ = writeln!(
                out,
                r#"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="black" stroke-width="1.5" marker-end="url(#head)"/>"#,
                sx(a.from.0),
                sy(a.from.1),
                sx(a.to.0),
                sy(a.to.1)
            );
        }
        out.push_str("</svg>\n");
        out
    }
}

fn min_max(it: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = it
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if lo.is_finite() {
        (lo, hi)
    } else {
        (0.0, 1.0)
    }
}

fn tick(v: f64) -> String {
    if v == 0.0 || (v.abs() >= 0.01 && v.abs() < 1e4) {
        format!("{v:.2}")
    } else {
        format!("{v:.1e}")
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn renders_all_elements() {
        let mut p = LinePlot::new("a < b", "x", "y");
        p.add_series(Series::line("l", vec![(0.0, 0.0), (1.0, 1.0)]));
        p.add_series(Series::scatter("s", vec![(0.5, 0.2)]));
        p.add_vertical_marker(0.5, "median");
        p.add_arrow(Arrow { from: (0.0, 0.0), to: (0.1, 0.1) });
        let svg = p.to_svg();
        assert!(svg.contains("<polyline"));
        assert!(svg.contains("<circle"));
        assert!(svg.contains("stroke-dasharray"));
        assert!(svg.contains("marker-end"));
        assert!(svg.contains("a &lt; b"));
        assert!(svg.trim_end().ends_with("</svg>"));
    }

    #[test]
    fn degenerate_bounds_do_not_divide_by_zero() {
        let mut p = LinePlot::new("t", "x", "y");
        p.add_series(Series::scatter("s", vec![(1.0, 1.0)]));
        assert!(!p.to_svg().contains("NaN"));
    }
}
