//! Self-contained SVG emitters for line plots and heatmaps. All styling is
//! inline; the output has no external dependencies.

fn fmt_num(v: f64) -> String {
    if v == 0.0 {
        return "0".to_string();
    }
    let a = v.abs();
    if a >= 1e4 || a < 1e-3 {
        format!("{v:.2e}")
    } else if a >= 100.0 {
        format!("{v:.1}")
    } else {
        format!("{v:.3}")
    }
}

/// Round tick spacing to 1/2/5 x 10^k.
fn nice_step(span: f64, target_ticks: usize) -> f64 {
    let raw = span / target_ticks.max(1) as f64;
    let mag = 10f64.powf(raw.abs().log10().floor());
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

const PALETTE: [&str; 8] = [
    "#4878cf", "#ee854a", "#6acc65", "#d65f5f", "#956cb4", "#8c613c", "#dc7ec0", "#797979",
];

#[derive(Debug, Clone)]
pub struct Series {
    pub label: String,
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
    /// Render dots instead of a connected line.
    pub marker_only: bool,
}

#[derive(Debug, Clone)]
pub struct LinePlot {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<Series>,
    pub width: f64,
    pub height: f64,
}

impl LinePlot {
    pub fn new(title: impl Into<String>, x_label: impl Into<String>, y_label: impl Into<String>) -> Self {
        LinePlot {
            title: title.into(),
            x_label: x_label.into(),
            y_label: y_label.into(),
            series: Vec::new(),
            width: 720.0,
            height: 440.0,
        }
    }

    pub fn add_series(&mut self, label: impl Into<String>, xs: Vec<f64>, ys: Vec<f64>) -> &mut Self {
        self.series.push(Series {
            label: label.into(),
            xs,
            ys,
            marker_only: false,
        });
        self
    }

    /// A dot series (scatter) sharing the axes with any line series.
    pub fn add_points(&mut self, label: impl Into<String>, xs: Vec<f64>, ys: Vec<f64>) -> &mut Self {
        self.series.push(Series {
            label: label.into(),
            xs,
            ys,
            marker_only: true,
        });
        self
    }

    pub fn to_svg(&self) -> String {
        let (ml, mr, mt, mb) = (70.0, 150.0, 44.0, 56.0);
        let pw = self.width - ml - mr;
        let ph = self.height - mt - mb;

        let mut xmin = f64::INFINITY;
        let mut xmax = f64::NEG_INFINITY;
        let mut ymin = f64::INFINITY;
        let mut ymax = f64::NEG_INFINITY;
        for s in &self.series {
            for &x in &s.xs {
                xmin = xmin.min(x);
                xmax = xmax.max(x);
            }
            for &y in &s.ys {
                ymin = ymin.min(y);
                ymax = ymax.max(y);
            }
        }
        if !xmin.is_finite() {
            xmin = 0.0;
            xmax = 1.0;
        }
        if !ymin.is_finite() {
            ymin = 0.0;
            ymax = 1.0;
        }
        if xmax == xmin {
            xmax = xmin + 1.0;
        }
        if ymax == ymin {
            ymax = ymin + 1.0;
        }
        let ypad = (ymax - ymin) * 0.05;
        let (ymin, ymax) = (ymin - ypad, ymax + ypad);

        let sx = |x: f64| ml + (x - xmin) / (xmax - xmin) * pw;
        let sy = |y: f64| mt + ph - (y - ymin) / (ymax - ymin) * ph;

        let mut out = String::new();
        out.push_str(&format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" \
             viewBox=\"0 0 {w} {h}\" font-family=\"Helvetica,Arial,sans-serif\">\n",
            w = self.width,
            h = self.height
        ));
        out.push_str(&format!(
            "<rect width=\"{}\" height=\"{}\" fill=\"white\"/>\n",
            self.width, self.height
        ));
        out.push_str(&format!(
            "<text x=\"{}\" y=\"24\" font-size=\"15\" text-anchor=\"middle\">{}</text>\n",
            ml + pw / 2.0,
            escape(&self.title)
        ));

        // Axes and ticks.
        out.push_str(&format!(
            "<rect x=\"{ml}\" y=\"{mt}\" width=\"{pw}\" height=\"{ph}\" fill=\"none\" \
             stroke=\"#333\" stroke-width=\"1\"/>\n"
        ));
        let xstep = nice_step(xmax - xmin, 8);
        let mut tick = (xmin / xstep).ceil() * xstep;
        while tick <= xmax + 1e-12 {
            let px = sx(tick);
            out.push_str(&format!(
                "<line x1=\"{px:.2}\" y1=\"{}\" x2=\"{px:.2}\" y2=\"{}\" stroke=\"#ccc\" \
                 stroke-width=\"0.5\"/>\n",
                mt,
                mt + ph
            ));
            out.push_str(&format!(
                "<text x=\"{px:.2}\" y=\"{}\" font-size=\"11\" text-anchor=\"middle\">{}</text>\n",
                mt + ph + 16.0,
                fmt_num(tick)
            ));
            tick += xstep;
        }
        let ystep = nice_step(ymax - ymin, 6);
        let mut tick = (ymin / ystep).ceil() * ystep;
        while tick <= ymax + 1e-12 {
            let py = sy(tick);
            out.push_str(&format!(
                "<line x1=\"{}\" y1=\"{py:.2}\" x2=\"{}\" y2=\"{py:.2}\" stroke=\"#ccc\" \
                 stroke-width=\"0.5\"/>\n",
                ml,
                ml + pw
            ));
            out.push_str(&format!(
                "<text x=\"{}\" y=\"{:.2}\" font-size=\"11\" text-anchor=\"end\">{}</text>\n",
                ml - 6.0,
                py + 4.0,
                fmt_num(tick)
            ));
            tick += ystep;
        }
        out.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-size=\"13\" text-anchor=\"middle\">{}</text>\n",
            ml + pw / 2.0,
            self.height - 14.0,
            escape(&self.x_label)
        ));
        out.push_str(&format!(
            "<text x=\"18\" y=\"{}\" font-size=\"13\" text-anchor=\"middle\" \
             transform=\"rotate(-90 18 {})\">{}</text>\n",
            mt + ph / 2.0,
            mt + ph / 2.0,
            escape(&self.y_label)
        ));

        // Series polylines and legend.
        for (si, s) in self.series.iter().enumerate() {
            let color = PALETTE[si % PALETTE.len()];
            if s.marker_only {
                for (&x, &y) in s.xs.iter().zip(&s.ys) {
                    if x.is_finite() && y.is_finite() {
                        out.push_str(&format!(
                            "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"1.8\" fill=\"{color}\" \
                             fill-opacity=\"0.55\"/>\n",
                            sx(x),
                            sy(y)
                        ));
                    }
                }
            } else {
                let points: Vec<String> = s
                    .xs
                    .iter()
                    .zip(&s.ys)
                    .filter(|(x, y)| x.is_finite() && y.is_finite())
                    .map(|(&x, &y)| format!("{:.2},{:.2}", sx(x), sy(y)))
                    .collect();
                out.push_str(&format!(
                    "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\"/>\n",
                    points.join(" ")
                ));
            }
            let ly = mt + 14.0 + si as f64 * 18.0;
            out.push_str(&format!(
                "<line x1=\"{}\" y1=\"{ly}\" x2=\"{}\" y2=\"{ly}\" stroke=\"{color}\" \
                 stroke-width=\"2\"/>\n",
                ml + pw + 10.0,
                ml + pw + 34.0
            ));
            out.push_str(&format!(
                "<text x=\"{}\" y=\"{}\" font-size=\"11\">{}</text>\n",
                ml + pw + 40.0,
                ly + 4.0,
                escape(&s.label)
            ));
        }
        out.push_str("</svg>\n");
        out
    }
}

/// A matrix rendered as colored cells with a diverging blue-white-red scale
/// centered on zero.
#[derive(Debug, Clone)]
pub struct Heatmap {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    /// Row-major values; rows render top to bottom.
    pub values: Vec<Vec<f64>>,
    pub width: f64,
    pub height: f64,
}

fn diverging_color(v: f64, limit: f64) -> String {
    let t = if limit > 0.0 {
        (v / limit).clamp(-1.0, 1.0)
    } else {
        0.0
    };
    let (r, g, b) = if t >= 0.0 {
        // white -> red
        (255.0, 255.0 - 180.0 * t, 255.0 - 208.0 * t)
    } else {
        // white -> blue
        (255.0 + 183.0 * t, 255.0 + 135.0 * t, 255.0 - 0.0 * t)
    };
    format!("rgb({},{},{})", r as u8, g as u8, b as u8)
}

impl Heatmap {
    pub fn new(title: impl Into<String>, values: Vec<Vec<f64>>) -> Self {
        Heatmap {
            title: title.into(),
            x_label: String::new(),
            y_label: String::new(),
            values,
            width: 620.0,
            height: 620.0,
        }
    }

    pub fn to_svg(&self) -> String {
        let rows = self.values.len().max(1);
        let cols = self.values.first().map(|r| r.len()).unwrap_or(0).max(1);
        let (ml, mr, mt, mb) = (60.0, 90.0, 44.0, 50.0);
        let pw = self.width - ml - mr;
        let ph = self.height - mt - mb;
        let cw = pw / cols as f64;
        let ch = ph / rows as f64;

        let limit = self
            .values
            .iter()
            .flatten()
            .fold(0.0f64, |m, &v| m.max(v.abs()));

        let mut out = String::new();
        out.push_str(&format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" \
             viewBox=\"0 0 {w} {h}\" font-family=\"Helvetica,Arial,sans-serif\">\n",
            w = self.width,
            h = self.height
        ));
        out.push_str(&format!(
            "<rect width=\"{}\" height=\"{}\" fill=\"white\"/>\n",
            self.width, self.height
        ));
        out.push_str(&format!(
            "<text x=\"{}\" y=\"24\" font-size=\"15\" text-anchor=\"middle\">{}</text>\n",
            ml + pw / 2.0,
            escape(&self.title)
        ));
        for (r, row) in self.values.iter().enumerate() {
            for (c, &v) in row.iter().enumerate() {
                out.push_str(&format!(
                    "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"{:.3}\" height=\"{:.3}\" fill=\"{}\"/>\n",
                    ml + c as f64 * cw,
                    mt + r as f64 * ch,
                    cw + 0.01,
                    ch + 0.01,
                    diverging_color(v, limit)
                ));
            }
        }
        out.push_str(&format!(
            "<rect x=\"{ml}\" y=\"{mt}\" width=\"{pw}\" height=\"{ph}\" fill=\"none\" \
             stroke=\"#333\"/>\n"
        ));
        if !self.x_label.is_empty() {
            out.push_str(&format!(
                "<text x=\"{}\" y=\"{}\" font-size=\"13\" text-anchor=\"middle\">{}</text>\n",
                ml + pw / 2.0,
                self.height - 16.0,
                escape(&self.x_label)
            ));
        }
        if !self.y_label.is_empty() {
            out.push_str(&format!(
                "<text x=\"18\" y=\"{}\" font-size=\"13\" text-anchor=\"middle\" \
                 transform=\"rotate(-90 18 {})\">{}</text>\n",
                mt + ph / 2.0,
                mt + ph / 2.0,
                escape(&self.y_label)
            ));
        }

        // Color scale bar with limits.
        let bar_x = ml + pw + 20.0;
        let steps = 40;
        for s in 0..steps {
            let t = 1.0 - 2.0 * (s as f64 + 0.5) / steps as f64;
            out.push_str(&format!(
                "<rect x=\"{bar_x}\" y=\"{:.2}\" width=\"16\" height=\"{:.2}\" fill=\"{}\"/>\n",
                mt + ph * s as f64 / steps as f64,
                ph / steps as f64 + 0.5,
                diverging_color(t * limit, limit)
            ));
        }
        out.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-size=\"10\">{}</text>\n",
            bar_x + 20.0,
            mt + 8.0,
            fmt_num(limit)
        ));
        out.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-size=\"10\">{}</text>\n",
            bar_x + 20.0,
            mt + ph,
            fmt_num(-limit)
        ));
        out.push_str("</svg>\n");
        out
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}
