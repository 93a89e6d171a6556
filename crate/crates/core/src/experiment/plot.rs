//! Minimal static SVG line plots for aggregated error traces: mean curves
//! with 25-75% quantile bands, optional log-scale vertical axis. No
//! external renderer; the output is a plain vector-graphics file.

use std::path::Path;

use crate::error::{Error, Result};
use crate::experiment::io::PlotRow;

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 480.0;
const MARGIN_L: f64 = 72.0;
const MARGIN_R: f64 = 24.0;
const MARGIN_T: f64 = 32.0;
const MARGIN_B: f64 = 56.0;

const SERIES_COLORS: [&str; 6] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b",
];

#[derive(Debug, Clone)]
pub struct PlotSeries {
    pub label: String,
    pub rows: Vec<PlotRow>,
}

#[derive(Debug, Clone)]
pub struct PlotOptions {
    pub title: String,
    pub y_label: String,
    pub log_y: bool,
}

impl Default for PlotOptions {
    fn default() -> Self {
        PlotOptions {
            title: "squared stationary error".into(),
            y_label: "error_sq".into(),
            log_y: true,
        }
    }
}

struct Scale {
    x_min: f64,
    x_max: f64,
    y_min: f64,
    y_max: f64,
    log_y: bool,
}

impl Scale {
    fn x(&self, v: f64) -> f64 {
        let t = (v - self.x_min) / (self.x_max - self.x_min).max(1e-300);
        MARGIN_L + t * (WIDTH - MARGIN_L - MARGIN_R)
    }

    fn y(&self, v: f64) -> f64 {
        let v = if self.log_y { v.max(1e-300).log10() } else { v };
        let t = (v - self.y_min) / (self.y_max - self.y_min).max(1e-300);
        HEIGHT - MARGIN_B - t * (HEIGHT - MARGIN_T - MARGIN_B)
    }
}

/// Renders series to an SVG file.
pub fn write_line_plot_svg(
    path: &Path,
    series: &[PlotSeries],
    options: &PlotOptions,
) -> Result<()> {
    if series.is_empty() || series.iter().all(|s| s.rows.is_empty()) {
        return Err(Error::InvalidConfig("nothing to plot".into()));
    }
    let xs: Vec<f64> = series
        .iter()
        .flat_map(|s| s.rows.iter().map(|r| r.iteration as f64))
        .collect();
    let raw_ys: Vec<f64> = series
        .iter()
        .flat_map(|s| {
            s.rows
                .iter()
                .flat_map(|r| [r.mean, r.q25, r.q75])
        })
        .filter(|v| v.is_finite() && (!options.log_y || *v > 0.0))
        .collect();
    if raw_ys.is_empty() {
        return Err(Error::InvalidConfig("no finite values to plot".into()));
    }
    let x_min = xs.iter().copied().fold(f64::INFINITY, f64::min);
    let x_max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let tr = |v: f64| if options.log_y { v.log10() } else { v };
    let mut y_min = raw_ys.iter().copied().map(tr).fold(f64::INFINITY, f64::min);
    let mut y_max = raw_ys
        .iter()
        .copied()
        .map(tr)
        .fold(f64::NEG_INFINITY, f64::max);
    if y_max - y_min < 1e-12 {
        y_min -= 0.5;
        y_max += 0.5;
    }
    let scale = Scale {
        x_min,
        x_max: x_max.max(x_min + 1.0),
        y_min,
        y_max,
        log_y: options.log_y,
    };

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\">\n"
    ));
    svg.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"20\" font-family=\"sans-serif\" font-size=\"14\" text-anchor=\"middle\">{}</text>\n",
        WIDTH / 2.0,
        xml_escape(&options.title)
    ));

    // Axes.
    svg.push_str(&format!(
        "<line x1=\"{l}\" y1=\"{b}\" x2=\"{r}\" y2=\"{b}\" stroke=\"black\"/>\n<line x1=\"{l}\" y1=\"{t}\" x2=\"{l}\" y2=\"{b}\" stroke=\"black\"/>\n",
        l = MARGIN_L,
        r = WIDTH - MARGIN_R,
        t = MARGIN_T,
        b = HEIGHT - MARGIN_B,
    ));

    // Ticks: 5 on each axis.
    for i in 0..=4 {
        let fx = x_min + (scale.x_max - x_min) * i as f64 / 4.0;
        let px = scale.x(fx);
        svg.push_str(&format!(
            "<line x1=\"{px}\" y1=\"{b}\" x2=\"{px}\" y2=\"{b2}\" stroke=\"black\"/>\n<text x=\"{px}\" y=\"{ty}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"middle\">{label}</text>\n",
            b = HEIGHT - MARGIN_B,
            b2 = HEIGHT - MARGIN_B + 5.0,
            ty = HEIGHT - MARGIN_B + 18.0,
            label = format!("{:.0}", fx),
        ));
        let fy = y_min + (y_max - y_min) * i as f64 / 4.0;
        let py = HEIGHT - MARGIN_B - (HEIGHT - MARGIN_T - MARGIN_B) * i as f64 / 4.0;
        let label = if options.log_y {
            format!("1e{:.1}", fy)
        } else {
            format!("{:.3}", fy)
        };
        svg.push_str(&format!(
            "<line x1=\"{l2}\" y1=\"{py}\" x2=\"{l}\" y2=\"{py}\" stroke=\"black\"/>\n<text x=\"{tx}\" y=\"{ty}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"end\">{label}</text>\n",
            l = MARGIN_L,
            l2 = MARGIN_L - 5.0,
            tx = MARGIN_L - 8.0,
            ty = py + 4.0,
        ));
    }
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"middle\">iteration</text>\n",
        (MARGIN_L + WIDTH - MARGIN_R) / 2.0,
        HEIGHT - 16.0
    ));
    svg.push_str(&format!(
        "<text x=\"18\" y=\"{}\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"middle\" transform=\"rotate(-90 18 {mid})\">{}</text>\n",
        (MARGIN_T + HEIGHT - MARGIN_B) / 2.0,
        xml_escape(&options.y_label),
        mid = (MARGIN_T + HEIGHT - MARGIN_B) / 2.0,
    ));

    for (idx, s) in series.iter().enumerate() {
        let color = SERIES_COLORS[idx % SERIES_COLORS.len()];
        let usable: Vec<&PlotRow> = s
            .rows
            .iter()
            .filter(|r| {
                r.mean.is_finite() && (!options.log_y || r.mean > 0.0)
            })
            .collect();
        if usable.is_empty() {
            continue;
        }
        // Quantile band as a closed polygon.
        let band_ok = usable
            .iter()
            .all(|r| r.q25.is_finite() && r.q75.is_finite() && (!options.log_y || r.q25 > 0.0));
        if band_ok {
            let mut pts = String::new();
            for r in &usable {
                pts.push_str(&format!(
                    "{:.2},{:.2} ",
                    scale.x(r.iteration as f64),
                    scale.y(r.q75)
                ));
            }
            for r in usable.iter().rev() {
                pts.push_str(&format!(
                    "{:.2},{:.2} ",
                    scale.x(r.iteration as f64),
                    scale.y(r.q25)
                ));
            }
            svg.push_str(&format!(
                "<polygon points=\"{}\" fill=\"{color}\" fill-opacity=\"0.15\" stroke=\"none\"/>\n",
                pts.trim_end()
            ));
        }
        let mut pts = String::new();
        for r in &usable {
            pts.push_str(&format!(
                "{:.2},{:.2} ",
                scale.x(r.iteration as f64),
                scale.y(r.mean)
            ));
        }
        svg.push_str(&format!(
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\"/>\n",
            pts.trim_end()
        ));
        // Legend entry.
        let ly = MARGIN_T + 16.0 * idx as f64;
        svg.push_str(&format!(
            "<line x1=\"{x}\" y1=\"{ly}\" x2=\"{x2}\" y2=\"{ly}\" stroke=\"{color}\" stroke-width=\"2\"/>\n<text x=\"{tx}\" y=\"{ty}\" font-family=\"sans-serif\" font-size=\"11\">{label}</text>\n",
            x = WIDTH - MARGIN_R - 150.0,
            x2 = WIDTH - MARGIN_R - 130.0,
            tx = WIDTH - MARGIN_R - 124.0,
            ty = ly + 4.0,
            label = xml_escape(&s.label),
        ));
    }
    svg.push_str("</svg>\n");
    std::fs::write(path, svg)?;
    Ok(())
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn writes_svg_with_band_and_legend() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("plot.svg");
        let rows: Vec<PlotRow> = (0..50)
            .map(|i| {
                let v = 10.0 * 0.9f64.powi(i as i32);
                PlotRow {
                    iteration: i,
                    mean: v,
                    q25: v * 0.8,
                    q75: v * 1.2,
                }
            })
            .collect();
        let series = vec![PlotSeries {
            label: "sw-fqi".into(),
            rows,
        }];
        write_line_plot_svg(&path, &series, &PlotOptions::default()).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("<svg"));
        assert!(text.contains("polyline"));
        assert!(text.contains("polygon"));
        assert!(text.contains("sw-fqi"));
    }

    #[test]
    fn rejects_empty_series() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("plot.svg");
        assert!(write_line_plot_svg(&path, &[], &PlotOptions::default()).is_err());
    }
}
