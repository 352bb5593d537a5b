//! Minimal static SVG plotter: polylines + axes only. Output is fully
//! deterministic (fixed decimal formatting) so identical data produces
//! byte-identical files.

/// A single polyline series in data coordinates.
#[derive(Debug, Clone)]
pub struct Series {
    pub points: Vec<(f64, f64)>,
    /// SVG stroke color, e.g. "#1f77b4".
    pub color: String,
    pub width: f64,
}

/// Plot canvas accumulating series; render with [`SvgPlot::render`].
#[derive(Debug, Clone)]
pub struct SvgPlot {
    pub width: u32,
    pub height: u32,
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    series: Vec<Series>,
    /// Optional fixed data range (x_min, x_max, y_min, y_max); auto otherwise.
    range: Option<(f64, f64, f64, f64)>,
}

const MARGIN_L: f64 = 64.0;
const MARGIN_R: f64 = 16.0;
const MARGIN_T: f64 = 28.0;
const MARGIN_B: f64 = 44.0;
const PALETTE: [&str; 6] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf",
];

impl SvgPlot {
    pub fn new(title: &str, x_label: &str, y_label: &str) -> Self {
        Self {
            width: 640,
            height: 480,
            title: title.to_string(),
            x_label: x_label.to_string(),
            y_label: y_label.to_string(),
            series: Vec::new(),
            range: None,
        }
    }

    /// Fix the data range instead of auto-scaling.
    pub fn with_range(mut self, x_min: f64, x_max: f64, y_min: f64, y_max: f64) -> Self {
        self.range = Some((x_min, x_max, y_min, y_max));
        self
    }

    /// Add a polyline; colors cycle through a fixed palette.
    pub fn polyline(&mut self, points: &[(f64, f64)]) {
        let color = PALETTE[self.series.len() % PALETTE.len()].to_string();
        self.series.push(Series {
            points: points.to_vec(),
            color,
            width: 1.2,
        });
    }

    fn data_range(&self) -> (f64, f64, f64, f64) {
        if let Some(r) = self.range {
            return r;
        }
        let (mut x0, mut x1) = (f64::INFINITY, f64::NEG_INFINITY);
        let (mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY);
        for s in &self.series {
            for &(x, y) in &s.points {
                if x.is_finite() && y.is_finite() {
                    x0 = x0.min(x);
                    x1 = x1.max(x);
                    y0 = y0.min(y);
                    y1 = y1.max(y);
                }
            }
        }
        if !(x0.is_finite() && y0.is_finite()) {
            return (0.0, 1.0, 0.0, 1.0);
        }
        // Pad degenerate ranges so the transform stays invertible.
        if x1 - x0 < 1e-300 {
            x0 -= 0.5;
            x1 += 0.5;
        }
        if y1 - y0 < 1e-300 {
            y0 -= 0.5;
            y1 += 0.5;
        }
        let (px, py) = (0.04 * (x1 - x0), 0.06 * (y1 - y0));
        (x0 - px, x1 + px, y0 - py, y1 + py)
    }

    /// Render the complete SVG document.
    pub fn render(&self) -> String {
        let (x0, x1, y0, y1) = self.data_range();
        let (w, h) = (self.width as f64, self.height as f64);
        let plot_w = w - MARGIN_L - MARGIN_R;
        let plot_h = h - MARGIN_T - MARGIN_B;
        let sx = |x: f64| MARGIN_L + (x - x0) / (x1 - x0) * plot_w;
        let sy = |y: f64| MARGIN_T + (y1 - y) / (y1 - y0) * plot_h;

        let mut out = String::new();
        out.push_str(&format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{}\" height=\"{}\" \
             viewBox=\"0 0 {} {}\">\n",
            self.width, self.height, self.width, self.height
        ));
        out.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
        // Frame.
        out.push_str(&format!(
            "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"{:.2}\" height=\"{:.2}\" \
             fill=\"none\" stroke=\"black\" stroke-width=\"1\"/>\n",
            MARGIN_L, MARGIN_T, plot_w, plot_h
        ));
        // Ticks and grid.
        for (t, x_axis) in [(true, true), (true, false)] {
            let _ = t;
            let n_ticks = 6;
            for k in 0..n_ticks {
                let f = k as f64 / (n_ticks - 1) as f64;
                if x_axis {
                    let xv = x0 + f * (x1 - x0);
                    let xs = sx(xv);
                    out.push_str(&format!(
                        "<line x1=\"{xs:.2}\" y1=\"{:.2}\" x2=\"{xs:.2}\" y2=\"{:.2}\" \
                         stroke=\"black\" stroke-width=\"1\"/>\n",
                        MARGIN_T + plot_h,
                        MARGIN_T + plot_h + 5.0
                    ));
                    out.push_str(&format!(
                        "<text x=\"{xs:.2}\" y=\"{:.2}\" font-size=\"11\" \
                         text-anchor=\"middle\" font-family=\"monospace\">{}</text>\n",
                        MARGIN_T + plot_h + 18.0,
                        tick_label(xv)
                    ));
                } else {
                    let yv = y0 + f * (y1 - y0);
                    let ys = sy(yv);
                    out.push_str(&format!(
                        "<line x1=\"{:.2}\" y1=\"{ys:.2}\" x2=\"{:.2}\" y2=\"{ys:.2}\" \
                         stroke=\"black\" stroke-width=\"1\"/>\n",
                        MARGIN_L - 5.0,
                        MARGIN_L
                    ));
                    out.push_str(&format!(
                        "<text x=\"{:.2}\" y=\"{:.2}\" font-size=\"11\" \
                         text-anchor=\"end\" font-family=\"monospace\">{}</text>\n",
                        MARGIN_L - 8.0,
                        ys + 4.0,
                        tick_label(yv)
                    ));
                }
            }
        }
        // Series, clipped to the frame.
        out.push_str(&format!(
            "<clipPath id=\"plot\"><rect x=\"{:.2}\" y=\"{:.2}\" width=\"{:.2}\" \
             height=\"{:.2}\"/></clipPath>\n",
            MARGIN_L, MARGIN_T, plot_w, plot_h
        ));
        out.push_str("<g clip-path=\"url(#plot)\">\n");
        for s in &self.series {
            if s.points.is_empty() {
                continue;
            }
            let mut d = String::new();
            for (k, &(x, y)) in s.points.iter().enumerate() {
                let cmd = if k == 0 { 'M' } else { 'L' };
                d.push_str(&format!("{cmd}{:.2} {:.2}", sx(x), sy(y)));
            }
            out.push_str(&format!(
                "<path d=\"{d}\" fill=\"none\" stroke=\"{}\" stroke-width=\"{:.2}\"/>\n",
                s.color, s.width
            ));
        }
        out.push_str("</g>\n");
        // Labels.
        out.push_str(&format!(
            "<text x=\"{:.2}\" y=\"18\" font-size=\"13\" text-anchor=\"middle\" \
             font-family=\"monospace\">{}</text>\n",
            MARGIN_L + plot_w / 2.0,
            xml_escape(&self.title)
        ));
        out.push_str(&format!(
            "<text x=\"{:.2}\" y=\"{:.2}\" font-size=\"12\" text-anchor=\"middle\" \
             font-family=\"monospace\">{}</text>\n",
            MARGIN_L + plot_w / 2.0,
            h - 8.0,
            xml_escape(&self.x_label)
        ));
        out.push_str(&format!(
            "<text x=\"14\" y=\"{:.2}\" font-size=\"12\" text-anchor=\"middle\" \
             font-family=\"monospace\" transform=\"rotate(-90 14 {:.2})\">{}</text>\n",
            MARGIN_T + plot_h / 2.0,
            MARGIN_T + plot_h / 2.0,
            xml_escape(&self.y_label)
        ));
        out.push_str("</svg>\n");
        out
    }
}

/// Short deterministic tick label: %.4g equivalent.
fn tick_label(v: f64) -> String {
    if v == 0.0 {
        return "0".to_string();
    }
    let a = v.abs();
    let s = if (1e-3..1e4).contains(&a) {
        format!("{v:.4}")
    } else {
        return format!("{v:.2e}");
    };
    // Trim trailing zeros (and a trailing dot).
    let s = s.trim_end_matches('0').trim_end_matches('.').to_string();
    if s.is_empty() || s == "-" {
        "0".to_string()
    } else {
        s
    }
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
