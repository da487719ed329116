//! Minimal deterministic SVG charts.

use std::fmt::Write;

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 420.0;
const LEFT: f64 = 80.0;
const RIGHT: f64 = 170.0;
const TOP: f64 = 44.0;
const BOTTOM: f64 = 56.0;

pub const PALETTE: [&str; 8] = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"];

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn f(v: f64) -> String {
    format!("{v:.2}")
}

fn tick_label(v: f64) -> String {
    let s = format!("{v:.3}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" { "0".into() } else { s.into() }
}

/// Range covering `values`, padded by 5% and widened when degenerate.
pub fn range_of(values: impl IntoIterator<Item = f64>, include_zero: bool) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for v in values.into_iter().filter(|v| v.is_finite()) {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if include_zero {
        lo = lo.min(0.0);
        hi = hi.max(0.0);
    }
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        return (lo - 1.0, hi + 1.0);
    }
    let pad = 0.05 * (hi - lo);
    (lo - pad, hi + pad)
}

pub struct Chart {
    x: (f64, f64),
    y: (f64, f64),
    body: String,
    legend: Vec<(String, String, bool)>,
    title: String,
    x_label: String,
    y_label: String,
    categories: Vec<String>,
}

impl Chart {
    pub fn new(title: &str, x_label: &str, y_label: &str, x: (f64, f64), y: (f64, f64)) -> Self {
        Self {
            x,
            y,
            body: String::new(),
            legend: Vec::new(),
            title: title.into(),
            x_label: x_label.into(),
            y_label: y_label.into(),
            categories: Vec::new(),
        }
    }

    /// Chart whose x axis holds `labels` at positions 0, 1, ...
    pub fn categorical(title: &str, y_label: &str, labels: Vec<String>, y: (f64, f64)) -> Self {
        let n = labels.len().max(1) as f64;
        let mut c = Self::new(title, "", y_label, (-0.5, n - 0.5), y);
        c.categories = labels;
        c
    }

    fn px(&self, v: f64) -> f64 {
        LEFT + (v - self.x.0) / (self.x.1 - self.x.0) * (WIDTH - LEFT - RIGHT)
    }

    fn py(&self, v: f64) -> f64 {
        HEIGHT - BOTTOM - (v - self.y.0) / (self.y.1 - self.y.0) * (HEIGHT - TOP - BOTTOM)
    }

    pub fn legend(&mut self, label: &str, color: &str, dashed: bool) {
        self.legend.push((label.into(), color.into(), dashed));
    }

    pub fn line(&mut self, points: &[(f64, f64)], color: &str, dashed: bool) {
        let pts: Vec<String> = points
            .iter()
            .filter(|(x, y)| x.is_finite() && y.is_finite())
            .map(|&(x, y)| format!("{},{}", f(self.px(x)), f(self.py(y))))
            .collect();
        let dash = if dashed { " stroke-dasharray=\"6 4\"" } else { "" };
        let _ = writeln!(
            self.body,
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"2\"{dash}/>",
            pts.join(" ")
        );
    }

    pub fn marker(&mut self, x: f64, y: f64, color: &str) {
        if x.is_finite() && y.is_finite() {
            let _ = writeln!(self.body, "<circle cx=\"{}\" cy=\"{}\" r=\"3.5\" fill=\"{color}\"/>", f(self.px(x)), f(self.py(y)));
        }
    }

    pub fn whisker(&mut self, x: f64, lo: f64, hi: f64, color: &str) {
        if !(x.is_finite() && lo.is_finite() && hi.is_finite()) {
            return;
        }
        let (cx, y0, y1) = (self.px(x), self.py(lo), self.py(hi));
        let _ = writeln!(
            self.body,
            "<path d=\"M{} {}V{}M{} {}H{}M{} {}H{}\" stroke=\"{color}\" stroke-width=\"1.2\" fill=\"none\"/>",
            f(cx), f(y0), f(y1), f(cx - 4.0), f(y0), f(cx + 4.0), f(cx - 4.0), f(y1), f(cx + 4.0)
        );
    }

    /// Bar from 0 to `value`, centred at `x` with width `w` in data units.
    pub fn bar(&mut self, x: f64, w: f64, value: f64, color: &str) {
        if !value.is_finite() {
            return;
        }
        let (x0, x1) = (self.px(x - w / 2.0), self.px(x + w / 2.0));
        let (y0, y1) = (self.py(value.max(0.0)), self.py(value.min(0.0)));
        let _ = writeln!(
            self.body,
            "<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"{color}\" fill-opacity=\"0.85\"/>",
            f(x0), f(y0), f(x1 - x0), f(y1 - y0)
        );
    }

    fn axes(&self) -> String {
        let mut s = String::new();
        let (x0, x1, y0, y1) = (LEFT, WIDTH - RIGHT, TOP, HEIGHT - BOTTOM);
        let _ = writeln!(s, "<path d=\"M{} {}V{}H{}\" stroke=\"#000\" fill=\"none\"/>", f(x0), f(y0), f(y1), f(x1));
        for i in 0..=4 {
            let v = self.y.0 + (self.y.1 - self.y.0) * i as f64 / 4.0;
            let y = self.py(v);
            let _ = writeln!(
                s,
                "<path d=\"M{} {}H{}\" stroke=\"#ddd\"/><text x=\"{}\" y=\"{}\" font-size=\"11\" text-anchor=\"end\">{}</text>",
                f(x0), f(y), f(x1), f(x0 - 6.0), f(y + 4.0), tick_label(v)
            );
        }
        if (self.y.0..=self.y.1).contains(&0.0) {
            let _ = writeln!(s, "<path d=\"M{} {}H{}\" stroke=\"#888\"/>", f(x0), f(self.py(0.0)), f(x1));
        }
        if self.categories.is_empty() {
            for i in 0..=4 {
                let v = self.x.0 + (self.x.1 - self.x.0) * i as f64 / 4.0;
                let _ = writeln!(
                    s,
                    "<text x=\"{}\" y=\"{}\" font-size=\"11\" text-anchor=\"middle\">{}</text>",
                    f(self.px(v)), f(y1 + 16.0), tick_label(v)
                );
            }
        } else {
            for (i, label) in self.categories.iter().enumerate() {
                let _ = writeln!(
                    s,
                    "<text x=\"{}\" y=\"{}\" font-size=\"11\" text-anchor=\"middle\">{}</text>",
                    f(self.px(i as f64)), f(y1 + 16.0), esc(label)
                );
            }
        }
        let _ = writeln!(
            s,
            "<text x=\"{}\" y=\"{}\" font-size=\"12\" text-anchor=\"middle\">{}</text>",
            f((x0 + x1) / 2.0), f(HEIGHT - 14.0), esc(&self.x_label)
        );
        let _ = writeln!(
            s,
            "<text transform=\"translate(18 {}) rotate(-90)\" font-size=\"12\" text-anchor=\"middle\">{}</text>",
            f((y0 + y1) / 2.0), esc(&self.y_label)
        );
        s
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\" font-family=\"sans-serif\">"
        );
        let _ = writeln!(s, "<rect width=\"100%\" height=\"100%\" fill=\"#fff\"/>");
        let _ = writeln!(
            s,
            "<text x=\"{}\" y=\"24\" font-size=\"15\" text-anchor=\"middle\">{}</text>",
            f(WIDTH / 2.0), esc(&self.title)
        );
        s.push_str(&self.axes());
        s.push_str(&self.body);
        for (i, (label, color, dashed)) in self.legend.iter().enumerate() {
            let y = TOP + 10.0 + 18.0 * i as f64;
            let x = WIDTH - RIGHT + 14.0;
            let dash = if *dashed { " stroke-dasharray=\"6 4\"" } else { "" };
            let _ = writeln!(
                s,
                "<path d=\"M{} {}H{}\" stroke=\"{color}\" stroke-width=\"3\"{dash}/><text x=\"{}\" y=\"{}\" font-size=\"11\">{}</text>",
                f(x), f(y), f(x + 22.0), f(x + 28.0), f(y + 4.0), esc(label)
            );
        }
        s.push_str("</svg>\n");
        s
    }
}
