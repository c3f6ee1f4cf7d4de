//! Minimal standalone SVG emission: one fixed-size canvas, one data
//! frame with linear axes and auto ticks. Callers pass already
//! transformed coordinates (take logs before plotting, label accordingly).

use std::fmt::Write;

pub const WIDTH: f64 = 720.0;
pub const HEIGHT: f64 = 480.0;
const MARGIN_L: f64 = 70.0;
const MARGIN_R: f64 = 20.0;
const MARGIN_T: f64 = 40.0;
const MARGIN_B: f64 = 55.0;

pub struct Canvas {
    body: String,
}

impl Canvas {
    pub fn new() -> Self {
        let mut body = String::new();
        writeln!(
            body,
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" \
             viewBox=\"0 0 {WIDTH} {HEIGHT}\" font-family=\"monospace\">"
        )
        .unwrap();
        writeln!(
            body,
            "<rect x=\"0\" y=\"0\" width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"white\"/>"
        )
        .unwrap();
        Canvas { body }
    }

    pub fn polyline(&mut self, pts: &[(f64, f64)], stroke: &str, width: f64, dash: Option<&str>) {
        if pts.len() < 2 {
            return;
        }
        let coords: Vec<String> = pts.iter().map(|(x, y)| format!("{x:.2},{y:.2}")).collect();
        let dash_attr = dash.map_or(String::new(), |d| format!(" stroke-dasharray=\"{d}\""));
        writeln!(
            self.body,
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{stroke}\" \
             stroke-width=\"{width}\"{dash_attr}/>",
            coords.join(" ")
        )
        .unwrap();
    }

    pub fn line(&mut self, a: (f64, f64), b: (f64, f64), stroke: &str, width: f64) {
        writeln!(
            self.body,
            "<line x1=\"{:.2}\" y1=\"{:.2}\" x2=\"{:.2}\" y2=\"{:.2}\" \
             stroke=\"{stroke}\" stroke-width=\"{width}\"/>",
            a.0, a.1, b.0, b.1
        )
        .unwrap();
    }

    pub fn circle(&mut self, x: f64, y: f64, r: f64, fill: &str) {
        writeln!(
            self.body,
            "<circle cx=\"{x:.2}\" cy=\"{y:.2}\" r=\"{r}\" fill=\"{fill}\"/>"
        )
        .unwrap();
    }

    pub fn text(&mut self, x: f64, y: f64, size: f64, anchor: &str, s: &str) {
        writeln!(
            self.body,
            "<text x=\"{x:.2}\" y=\"{y:.2}\" font-size=\"{size}\" \
             text-anchor=\"{anchor}\">{}</text>",
            escape(s)
        )
        .unwrap();
    }

    pub fn finish(mut self) -> String {
        self.body.push_str("</svg>\n");
        self.body
    }
}

impl Default for Canvas {
    fn default() -> Self {
        Self::new()
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Data-to-pixel mapping for the plot area, with padded ranges so points
/// never sit on the frame.
#[derive(Debug, Clone, Copy)]
pub struct Frame {
    xr: (f64, f64),
    yr: (f64, f64),
}

impl Frame {
    pub fn new(xr: (f64, f64), yr: (f64, f64)) -> Self {
        let pad = |(lo, hi): (f64, f64)| {
            if lo == hi {
                (lo - 1.0, hi + 1.0)
            } else {
                let w = hi - lo;
                (lo - 0.04 * w, hi + 0.04 * w)
            }
        };
        Frame {
            xr: pad(xr),
            yr: pad(yr),
        }
    }

    /// Frame spanning the given points, or a unit default when empty.
    pub fn around(pts: &[(f64, f64)]) -> Self {
        if pts.is_empty() {
            return Frame::new((0.0, 1.0), (0.0, 1.0));
        }
        let xs: Vec<f64> = pts.iter().map(|p| p.0).collect();
        let ys: Vec<f64> = pts.iter().map(|p| p.1).collect();
        let min = |v: &[f64]| v.iter().copied().fold(f64::INFINITY, f64::min);
        let max = |v: &[f64]| v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Frame::new((min(&xs), max(&xs)), (min(&ys), max(&ys)))
    }

    pub fn map(&self, x: f64, y: f64) -> (f64, f64) {
        let fx = (x - self.xr.0) / (self.xr.1 - self.xr.0);
        let fy = (y - self.yr.0) / (self.yr.1 - self.yr.0);
        (
            MARGIN_L + fx * (WIDTH - MARGIN_L - MARGIN_R),
            HEIGHT - MARGIN_B - fy * (HEIGHT - MARGIN_T - MARGIN_B),
        )
    }

    pub fn map_all(&self, pts: &[(f64, f64)]) -> Vec<(f64, f64)> {
        pts.iter().map(|&(x, y)| self.map(x, y)).collect()
    }

    /// Frame rectangle, ticks, tick labels, axis labels, and title.
    pub fn draw_axes(&self, canvas: &mut Canvas, title: &str, xlabel: &str, ylabel: &str) {
        let (x0, y0) = (MARGIN_L, HEIGHT - MARGIN_B);
        let (x1, y1) = (WIDTH - MARGIN_R, MARGIN_T);
        canvas.line((x0, y0), (x1, y0), "black", 1.0);
        canvas.line((x0, y0), (x0, y1), "black", 1.0);
        for t in nice_ticks(self.xr.0, self.xr.1, 6) {
            let (px, _) = self.map(t, self.yr.0);
            canvas.line((px, y0), (px, y0 + 5.0), "black", 1.0);
            canvas.text(px, y0 + 18.0, 11.0, "middle", &tick_label(t));
        }
        for t in nice_ticks(self.yr.0, self.yr.1, 6) {
            let (_, py) = self.map(self.xr.0, t);
            canvas.line((x0 - 5.0, py), (x0, py), "black", 1.0);
            canvas.text(x0 - 8.0, py + 4.0, 11.0, "end", &tick_label(t));
        }
        canvas.text((x0 + x1) / 2.0, HEIGHT - 12.0, 13.0, "middle", xlabel);
        canvas.text(14.0, (y0 + y1) / 2.0, 13.0, "middle", ylabel);
        canvas.text((x0 + x1) / 2.0, 22.0, 15.0, "middle", title);
    }
}

/// Round tick positions covering [lo, hi] at a 1/2/5 step.
pub fn nice_ticks(lo: f64, hi: f64, target: usize) -> Vec<f64> {
    if !(hi > lo) || !lo.is_finite() || !hi.is_finite() {
        return vec![lo];
    }
    let raw = (hi - lo) / target.max(2) as f64;
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
    } * mag;
    // Integer multiples of the step, so zero is exact and nothing drifts.
    let mut ticks = Vec::new();
    let mut k = (lo / step).ceil() as i64;
    while k as f64 * step <= hi + step * 1e-9 {
        ticks.push(if k == 0 { 0.0 } else { k as f64 * step });
        k += 1;
    }
    ticks
}

fn tick_label(t: f64) -> String {
    if t != 0.0 && (t.abs() >= 1e4 || t.abs() < 1e-3) {
        format!("{t:.1e}")
    } else {
        let s = format!("{t:.4}");
        let s = s.trim_end_matches('0').trim_end_matches('.');
        s.to_string()
    }
}
