//! Minimal standalone SVG line charts.

use std::fmt::Write;

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 420.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;

pub struct Line<'a> {
    pub label: &'a str,
    pub color: &'a str,
    pub width: f64,
    pub dashed: bool,
    pub points: Vec<(f64, f64)>,
}

pub struct Chart<'a> {
    pub title: &'a str,
    pub y_label: &'a str,
    /// Draws a vertical dashed marker, e.g. at the treatment date.
    pub marker: Option<f64>,
    /// Draws a horizontal reference line at zero.
    pub zero_line: bool,
    pub lines: Vec<Line<'a>>,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn ticks(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..=n).map(|i| lo + (hi - lo) * i as f64 / n as f64).collect()
}

impl Chart<'_> {
    pub fn render(&self) -> String {
        let finite = self
            .lines
            .iter()
            .flat_map(|l| l.points.iter())
            .filter(|(x, y)| x.is_finite() && y.is_finite());
        let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
        for &(x, y) in finite {
            x0 = x0.min(x);
            x1 = x1.max(x);
            y0 = y0.min(y);
            y1 = y1.max(y);
        }
        if self.zero_line && y0.is_finite() {
            y0 = y0.min(0.0);
            y1 = y1.max(0.0);
        }
        if !x0.is_finite() {
            (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
        }
        if x1 == x0 {
            x1 = x0 + 1.0;
        }
        if y1 == y0 {
            y0 -= 1.0;
            y1 += 1.0;
        }
        let pad = (y1 - y0) * 0.05;
        let (y0, y1) = (y0 - pad, y1 + pad);
        let plot_w = WIDTH - LEFT - RIGHT;
        let plot_h = HEIGHT - TOP - BOTTOM;
        let sx = |x: f64| LEFT + (x - x0) / (x1 - x0) * plot_w;
        let sy = |y: f64| TOP + (y1 - y) / (y1 - y0) * plot_h;

        let mut out = String::new();
        let _ = writeln!(
            out,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
        );
        let _ = writeln!(out, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="24" text-anchor="middle" font-size="15">{}</text>"#,
            WIDTH / 2.0,
            escape(self.title)
        );
        let _ = writeln!(
            out,
            r#"<rect x="{LEFT}" y="{TOP}" width="{plot_w:.2}" height="{plot_h:.2}" fill="none" stroke="black"/>"#
        );
        for y in ticks(y0, y1, 5) {
            let _ = writeln!(
                out,
                r##"<line x1="{:.2}" y1="{:.2}" x2="{LEFT}" y2="{:.2}" stroke="black"/><text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"##,
                LEFT - 5.0,
                sy(y),
                sy(y),
                LEFT - 8.0,
                sy(y) + 4.0,
                format_tick(y)
            );
        }
        let span = (x1 - x0).round().max(1.0) as usize;
        let step = span.div_ceil(10).max(1);
        let mut x = x0.ceil();
        while x <= x1 {
            let _ = writeln!(
                out,
                r#"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="black"/><text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
                sx(x),
                TOP + plot_h,
                sx(x),
                TOP + plot_h + 5.0,
                sx(x),
                TOP + plot_h + 20.0,
                x
            );
            x += step as f64;
        }
        let _ = writeln!(
            out,
            r#"<text x="16" y="{:.2}" text-anchor="middle" transform="rotate(-90 16 {:.2})">{}</text>"#,
            TOP + plot_h / 2.0,
            TOP + plot_h / 2.0,
            escape(self.y_label)
        );
        if self.zero_line {
            let _ = writeln!(
                out,
                r##"<line x1="{LEFT}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="#888888"/>"##,
                sy(0.0),
                LEFT + plot_w,
                sy(0.0)
            );
        }
        if let Some(m) = self.marker.filter(|m| (x0..=x1).contains(m)) {
            let _ = writeln!(
                out,
                r##"<line x1="{:.2}" y1="{TOP}" x2="{:.2}" y2="{:.2}" stroke="#888888" stroke-dasharray="4 4"/>"##,
                sx(m),
                sx(m),
                TOP + plot_h
            );
        }
        for line in &self.lines {
            let pts: Vec<String> = line
                .points
                .iter()
                .filter(|(x, y)| x.is_finite() && y.is_finite())
                .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
                .collect();
            let dash = if line.dashed { r#" stroke-dasharray="6 3""# } else { "" };
            let _ = writeln!(
                out,
                r#"<polyline fill="none" stroke="{}" stroke-width="{}"{dash} points="{}"/>"#,
                line.color,
                line.width,
                pts.join(" ")
            );
        }
        let mut ly = TOP + 14.0;
        for line in self.lines.iter().filter(|l| !l.label.is_empty()) {
            let dash = if line.dashed { r#" stroke-dasharray="6 3""# } else { "" };
            let _ = writeln!(
                out,
                r#"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="{}" stroke-width="{}"{dash}/><text x="{:.2}" y="{:.2}">{}</text>"#,
                LEFT + 10.0,
                ly - 4.0,
                LEFT + 35.0,
                ly - 4.0,
                line.color,
                line.width,
                LEFT + 40.0,
                ly,
                escape(line.label)
            );
            ly += 16.0;
        }
        out.push_str("</svg>\n");
        out
    }
}

fn format_tick(v: f64) -> String {
    let a = v.abs();
    if a != 0.0 && !(1e-3..1e5).contains(&a) {
        format!("{v:.2e}")
    } else {
        format!("{v:.3}").trim_end_matches('0').trim_end_matches('.').to_string()
    }
}
