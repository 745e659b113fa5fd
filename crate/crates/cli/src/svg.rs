//! Small static SVG line/scatter plots. Every series is preceded by an XML
//! comment carrying its data as JSON, so plots double as data files.

use std::fmt::Write;

const WIDTH: f64 = 760.0;
const HEIGHT: f64 = 480.0;
const LEFT: f64 = 72.0;
const RIGHT: f64 = 180.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 56.0;

const PALETTE: [&str; 10] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Style {
    Line,
    Markers,
    LineMarkers,
}

#[derive(Debug, Clone)]
pub struct Series {
    pub name: String,
    /// CSS class of the emitted elements.
    pub class: String,
    pub style: Style,
    pub points: Vec<(f64, f64)>,
    /// Whether the series gets a legend entry.
    pub legend: bool,
    /// Palette index; series sharing it share a colour.
    pub color: usize,
}

/// Shaded region between two curves sharing x values.
#[derive(Debug, Clone)]
pub struct Band {
    pub name: String,
    pub x: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

#[derive(Debug, Clone, Default)]
pub struct Plot {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub x_log: bool,
    pub series: Vec<Series>,
    pub bands: Vec<Band>,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Comment-safe JSON (a literal `--` may not appear inside an XML comment).
fn comment_json(v: &serde_json::Value) -> String {
    v.to_string().replace("--", "- -")
}

fn nice_step(span: f64) -> f64 {
    let raw = span / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let norm = raw / mag;
    let step = if norm < 1.5 {
        1.0
    } else if norm < 3.5 {
        2.0
    } else if norm < 7.5 {
        5.0
    } else {
        10.0
    };
    step * mag
}

fn linear_ticks(lo: f64, hi: f64) -> Vec<f64> {
    let step = nice_step(hi - lo);
    let first = (lo / step).ceil() as i64;
    let last = (hi / step + 1e-9).floor() as i64;
    (first..=last).map(|k| k as f64 * step).collect()
}

fn log_ticks(lo: f64, hi: f64) -> Vec<f64> {
    let mut out = Vec::new();
    let mut decade = 10f64.powf(lo.log10().floor());
    while decade <= hi {
        for m in [1.0, 2.0, 5.0] {
            let t = decade * m;
            if t >= lo && t <= hi {
                out.push(t);
            }
        }
        decade *= 10.0;
    }
    out
}

fn format_tick(v: f64) -> String {
    if v.abs() >= 1000.0 && (v / 1000.0).fract() == 0.0 {
        format!("{}k", v / 1000.0)
    } else {
        let s = format!("{v:.4}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

struct Axes {
    x: (f64, f64),
    y: (f64, f64),
    x_log: bool,
}

impl Axes {
    fn px(&self, x: f64) -> f64 {
        let (lo, hi) = self.x;
        let frac = if self.x_log {
            (x.ln() - lo.ln()) / (hi.ln() - lo.ln())
        } else {
            (x - lo) / (hi - lo)
        };
        LEFT + frac * (WIDTH - LEFT - RIGHT)
    }

    fn py(&self, y: f64) -> f64 {
        let (lo, hi) = self.y;
        TOP + (1.0 - (y - lo) / (hi - lo)) * (HEIGHT - TOP - BOTTOM)
    }
}

fn range(values: impl Iterator<Item = f64>, log: bool) -> (f64, f64) {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for v in values.filter(|v| v.is_finite() && (!log || *v > 0.0)) {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if !lo.is_finite() {
        return if log { (1.0, 10.0) } else { (0.0, 1.0) };
    }
    if log {
        if hi <= lo {
            return (lo / 2.0, hi * 2.0);
        }
        return (lo, hi);
    }
    if hi - lo < 1e-12 * lo.abs().max(1.0) {
        let pad = lo.abs().max(1.0) * 0.05;
        return (lo - pad, hi + pad);
    }
    let pad = (hi - lo) * 0.05;
    (lo - pad, hi + pad)
}

fn path_data(axes: &Axes, points: &[(f64, f64)]) -> String {
    let mut d = String::new();
    let mut pen_down = false;
    for &(x, y) in points {
        if !x.is_finite() || !y.is_finite() || (axes.x_log && x <= 0.0) {
            pen_down = false;
            continue;
        }
        let cmd = if pen_down { 'L' } else { 'M' };
        let _ = write!(d, "{cmd}{:.2},{:.2} ", axes.px(x), axes.py(y));
        pen_down = true;
    }
    d.trim_end().to_string()
}

impl Plot {
    pub fn render(&self) -> String {
        let xs = self
            .series
            .iter()
            .flat_map(|s| s.points.iter().map(|p| p.0))
            .chain(self.bands.iter().flat_map(|b| b.x.iter().copied()));
        let ys = self
            .series
            .iter()
            .flat_map(|s| s.points.iter().map(|p| p.1))
            .chain(self.bands.iter().flat_map(|b| b.lower.iter().chain(&b.upper).copied()));
        let axes = Axes {
            x: range(xs, self.x_log),
            y: range(ys, false),
            x_log: self.x_log,
        };

        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
        );
        let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
        let _ = writeln!(
            s,
            r#"<text x="{}" y="22" text-anchor="middle" font-size="15">{}</text>"#,
            (LEFT + WIDTH - RIGHT) / 2.0,
            escape(&self.title)
        );

        // axes and grid
        let (x0, x1) = (LEFT, WIDTH - RIGHT);
        let (y0, y1) = (HEIGHT - BOTTOM, TOP);
        let xt = if self.x_log {
            log_ticks(axes.x.0, axes.x.1)
        } else {
            linear_ticks(axes.x.0, axes.x.1)
        };
        for t in xt {
            let x = axes.px(t);
            let _ = writeln!(
                s,
                "<line x1=\"{x:.2}\" y1=\"{y0}\" x2=\"{x:.2}\" y2=\"{y1}\" stroke=\"#e5e5e5\"/>\
                 <text x=\"{x:.2}\" y=\"{}\" text-anchor=\"middle\">{}</text>",
                y0 + 16.0,
                format_tick(t)
            );
        }
        for t in linear_ticks(axes.y.0, axes.y.1) {
            let y = axes.py(t);
            let _ = writeln!(
                s,
                "<line x1=\"{x0}\" y1=\"{y:.2}\" x2=\"{x1}\" y2=\"{y:.2}\" stroke=\"#e5e5e5\"/>\
                 <text x=\"{}\" y=\"{:.2}\" text-anchor=\"end\">{}</text>",
                x0 - 6.0,
                y + 4.0,
                format_tick(t)
            );
        }
        let _ = writeln!(
            s,
            r#"<rect x="{x0}" y="{y1}" width="{}" height="{}" fill="none" stroke="black"/>"#,
            x1 - x0,
            y0 - y1
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
            (x0 + x1) / 2.0,
            HEIGHT - 14.0,
            escape(&self.x_label)
        );
        let _ = writeln!(
            s,
            r#"<text transform="translate(18,{}) rotate(-90)" text-anchor="middle">{}</text>"#,
            (y0 + y1) / 2.0,
            escape(&self.y_label)
        );

        for band in &self.bands {
            let data = serde_json::json!({"band": band.name, "x": band.x, "lower": band.lower, "upper": band.upper});
            let _ = writeln!(s, "<!-- data {} -->", comment_json(&data));
            let upper: Vec<(f64, f64)> = band.x.iter().copied().zip(band.upper.iter().copied()).collect();
            let lower: Vec<(f64, f64)> = band.x.iter().copied().zip(band.lower.iter().copied()).rev().collect();
            let mut d = path_data(&axes, &upper);
            let back = path_data(&axes, &lower);
            if !d.is_empty() && !back.is_empty() {
                d.push_str(&back.replacen('M', " L", 1));
                d.push_str(" Z");
            }
            let _ = writeln!(s, r##"<path class="band" d="{d}" fill="#bbbbbb" fill-opacity="0.5" stroke="none"/>"##);
        }

        let mut legend_row = 0;
        for series in &self.series {
            let color = PALETTE[series.color % PALETTE.len()];
            let data = serde_json::json!({"series": series.name, "points": series.points});
            let _ = writeln!(s, "<!-- data {} -->", comment_json(&data));
            let _ = writeln!(s, r#"<g class="{}" data-name="{}">"#, escape(&series.class), escape(&series.name));
            if series.style != Style::Markers {
                let _ = writeln!(
                    s,
                    r#"<path class="{}" d="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#,
                    escape(&series.class),
                    path_data(&axes, &series.points)
                );
            }
            if series.style != Style::Line {
                for &(x, y) in series.points.iter().filter(|p| p.0.is_finite() && p.1.is_finite()) {
                    let _ = writeln!(
                        s,
                        r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{color}"/>"#,
                        axes.px(x),
                        axes.py(y)
                    );
                }
            }
            let _ = writeln!(s, "</g>");
            if !series.legend {
                continue;
            }
            let ly = TOP + 8.0 + 16.0 * legend_row as f64;
            legend_row += 1;
            let _ = writeln!(
                s,
                r#"<rect x="{}" y="{:.1}" width="12" height="3" fill="{color}"/><text x="{}" y="{:.1}">{}</text>"#,
                x1 + 12.0,
                ly,
                x1 + 30.0,
                ly + 5.0,
                escape(&series.name)
            );
        }
        s.push_str("</svg>\n");
        s
    }
}
