//! Static SVG charts from run logs: hand-emitted polylines, no plotting
//! dependency.

use anyhow::{bail, Result};
use mavctl::sim::RunLog;
use std::fmt::Write as _;

const PALETTE: &[&str] = &[
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#17becf", "#e377c2",
];

pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
    pub color: &'static str,
    pub dashed: bool,
}

pub struct Chart {
    pub title: String,
    pub y_label: String,
    pub series: Vec<Series>,
    /// Horizontal guide lines (value, color).
    pub guides: Vec<(f64, &'static str)>,
    pub x_range: (f64, f64),
    pub y_range: (f64, f64),
}

impl Chart {
    fn new(title: &str, y_label: &str) -> Chart {
        Chart {
            title: title.to_string(),
            y_label: y_label.to_string(),
            series: Vec::new(),
            guides: Vec::new(),
            x_range: (0.0, 1.0),
            y_range: (0.0, 1.0),
        }
    }

    fn finalize_ranges(&mut self) {
        let mut x = (f64::INFINITY, f64::NEG_INFINITY);
        let mut y = (f64::INFINITY, f64::NEG_INFINITY);
        for s in &self.series {
            for &(px, py) in &s.points {
                x.0 = x.0.min(px);
                x.1 = x.1.max(px);
                y.0 = y.0.min(py);
                y.1 = y.1.max(py);
            }
        }
        for &(g, _) in &self.guides {
            y.0 = y.0.min(g);
            y.1 = y.1.max(g);
        }
        if !x.0.is_finite() || x.1 <= x.0 {
            x = (0.0, 1.0);
        }
        if !y.0.is_finite() {
            y = (0.0, 1.0);
        }
        if y.1 - y.0 < 1e-9 {
            y.0 -= 0.5;
            y.1 += 0.5;
        }
        let pad = 0.05 * (y.1 - y.0);
        self.x_range = x;
        self.y_range = (y.0 - pad, y.1 + pad);
    }
}

/// Round tick spacing to a 1/2/5 decade grid.
fn nice_ticks(lo: f64, hi: f64, target: usize) -> Vec<f64> {
    let span = hi - lo;
    let raw = span / target as f64;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 2.5, 5.0, 10.0]
        .iter()
        .map(|m| m * mag)
        .find(|s| span / s <= target as f64 + 0.5)
        .unwrap_or(10.0 * mag);
    let first = (lo / step).ceil() * step;
    let mut ticks = Vec::new();
    let mut t = first;
    while t <= hi + 1e-12 * span {
        ticks.push(if t.abs() < 1e-12 * span { 0.0 } else { t });
        t += step;
    }
    ticks
}

fn fmt_tick(v: f64) -> String {
    if v == 0.0 {
        "0".into()
    } else if v.abs() >= 1000.0 || v.abs() < 0.01 {
        format!("{v:.1e}")
    } else {
        let s = format!("{v:.3}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

/// Render charts into one SVG as a grid of panels.
pub fn render(charts: &mut [Chart], cols: usize) -> String {
    let (pw, ph) = (640.0, 340.0);
    let (ml, mr, mt, mb) = (62.0, 14.0, 34.0, 40.0);
    let cols = cols.max(1);
    let rows = charts.len().div_ceil(cols);
    let (w, h) = (pw * cols as f64, ph * rows as f64);
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="{w}" height="{h}" fill="white"/>"#);

    for (idx, chart) in charts.iter_mut().enumerate() {
        chart.finalize_ranges();
        let ox = pw * (idx % cols) as f64;
        let oy = ph * (idx / cols) as f64;
        let (x0, x1) = chart.x_range;
        let (y0, y1) = chart.y_range;
        let plot_w = pw - ml - mr;
        let plot_h = ph - mt - mb;
        let sx = |v: f64| ox + ml + (v - x0) / (x1 - x0) * plot_w;
        let sy = |v: f64| oy + mt + (1.0 - (v - y0) / (y1 - y0)) * plot_h;

        let _ = writeln!(svg, "<g>");
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" font-size="14" font-weight="bold">{}</text>"#,
            ox + ml,
            oy + 20.0,
            chart.title
        );
        let _ = writeln!(
            svg,
            r##"<rect x="{}" y="{}" width="{plot_w}" height="{plot_h}" fill="none" stroke="#999"/>"##,
            ox + ml,
            oy + mt
        );
        for t in nice_ticks(x0, x1, 6) {
            let x = sx(t);
            let _ = writeln!(
                svg,
                r##"<line x1="{x}" y1="{}" x2="{x}" y2="{}" stroke="#ddd"/>"##,
                oy + mt,
                oy + mt + plot_h
            );
            let _ = writeln!(
                svg,
                r#"<text x="{x}" y="{}" text-anchor="middle">{}</text>"#,
                oy + mt + plot_h + 16.0,
                fmt_tick(t)
            );
        }
        for t in nice_ticks(y0, y1, 5) {
            let y = sy(t);
            let _ = writeln!(
                svg,
                r##"<line x1="{}" y1="{y}" x2="{}" y2="{y}" stroke="#ddd"/>"##,
                ox + ml,
                ox + ml + plot_w
            );
            let _ = writeln!(
                svg,
                r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#,
                ox + ml - 6.0,
                y + 4.0,
                fmt_tick(t)
            );
        }
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" text-anchor="middle">time [s]</text>"#,
            ox + ml + plot_w / 2.0,
            oy + ph - 8.0
        );
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" text-anchor="middle" transform="rotate(-90 {} {})">{}</text>"#,
            ox + 16.0,
            oy + mt + plot_h / 2.0,
            ox + 16.0,
            oy + mt + plot_h / 2.0,
            chart.y_label
        );
        for &(g, color) in &chart.guides {
            let y = sy(g);
            let _ = writeln!(
                svg,
                r#"<line x1="{}" y1="{y}" x2="{}" y2="{y}" stroke="{color}" stroke-dasharray="6 3"/>"#,
                ox + ml,
                ox + ml + plot_w
            );
        }
        for s in &chart.series {
            let mut pts = String::new();
            // decimate long traces, SVG readers choke on 100k points
            let stride = (s.points.len() / 4000).max(1);
            for (k, &(px, py)) in s.points.iter().enumerate() {
                if k % stride == 0 || k + 1 == s.points.len() {
                    let _ = write!(pts, "{:.2},{:.2} ", sx(px), sy(py));
                }
            }
            let dash = if s.dashed {
                r#" stroke-dasharray="5 4""#
            } else {
                ""
            };
            let _ = writeln!(
                svg,
                r#"<polyline points="{}" fill="none" stroke="{}" stroke-width="1.4"{dash}/>"#,
                pts.trim_end(),
                s.color
            );
        }
        for (k, s) in chart.series.iter().enumerate() {
            let lx = ox + ml + plot_w - 120.0;
            let ly = oy + mt + 14.0 + 14.0 * k as f64;
            let dash = if s.dashed {
                r#" stroke-dasharray="5 4""#
            } else {
                ""
            };
            let _ = writeln!(
                svg,
                r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{}" stroke-width="2"{dash}/>"#,
                lx + 18.0,
                s.color
            );
            let _ = writeln!(
                svg,
                r#"<text x="{}" y="{}">{}</text>"#,
                lx + 24.0,
                ly + 4.0,
                s.label
            );
        }
        let _ = writeln!(svg, "</g>");
    }
    let _ = writeln!(svg, "</svg>");
    svg
}

/// Position tracking chart: measured xyz solid, references dashed.
pub fn position_chart(log: &RunLog) -> Chart {
    let mut chart = Chart::new("position vs reference", "position [m]");
    let axes: [(&str, fn(&mavctl::sim::LogRow) -> (f64, f64)); 3] = [
        ("x", |r| (r.state.r.x, r.ref_r.x)),
        ("y", |r| (r.state.r.y, r.ref_r.y)),
        ("z", |r| (r.state.r.z, r.ref_r.z)),
    ];
    for (k, (name, get)) in axes.iter().enumerate() {
        chart.series.push(Series {
            label: name.to_string(),
            points: log.rows.iter().map(|r| (r.t, get(r).0)).collect(),
            color: PALETTE[k],
            dashed: false,
        });
        chart.series.push(Series {
            label: format!("{name} ref"),
            points: log.rows.iter().map(|r| (r.t, get(r).1)).collect(),
            color: PALETTE[k],
            dashed: true,
        });
    }
    chart
}

pub fn yaw_error_chart(log: &RunLog) -> Chart {
    let mut chart = Chart::new("yaw tracking error", "yaw error [deg]");
    chart.series.push(Series {
        label: "yaw error".into(),
        points: log
            .rows
            .iter()
            .map(|r| (r.t, r.yaw_error().to_degrees()))
            .collect(),
        color: PALETTE[0],
        dashed: false,
    });
    chart.guides.push((5.0, "#aaa"));
    chart.guides.push((-5.0, "#aaa"));
    chart
}

/// One panel per motor: health fraction with its 3-sigma band and the
/// failure threshold.
pub fn health_charts(log: &RunLog) -> Vec<Chart> {
    (0..6)
        .map(|i| {
            let mut chart = Chart::new(&format!("motor {} health", i + 1), "L(h)");
            chart.series.push(Series {
                label: "L(h)".into(),
                points: log.rows.iter().map(|r| (r.t, r.lh[i])).collect(),
                color: PALETTE[0],
                dashed: false,
            });
            chart.series.push(Series {
                label: "L(h+3s)".into(),
                points: log.rows.iter().map(|r| (r.t, r.lh_hi[i])).collect(),
                color: PALETTE[2],
                dashed: true,
            });
            chart.series.push(Series {
                label: "L(h-3s)".into(),
                points: log.rows.iter().map(|r| (r.t, r.lh_lo[i])).collect(),
                color: PALETTE[3],
                dashed: true,
            });
            chart.guides.push((0.5, "#d62728"));
            chart
        })
        .collect()
}

pub fn thrust_chart(log: &RunLog) -> Chart {
    let mut chart = Chart::new("commanded motor thrusts", "thrust [N]");
    for i in 0..6 {
        chart.series.push(Series {
            label: format!("motor {}", i + 1),
            points: log.rows.iter().map(|r| (r.t, r.f_cmd[i])).collect(),
            color: PALETTE[i],
            dashed: false,
        });
    }
    chart
}

/// Write the standard chart set into `out_dir`, returning the files
/// created.
pub fn plot_log(
    log: &RunLog,
    out_dir: &std::path::Path,
    stem: &str,
) -> Result<Vec<std::path::PathBuf>> {
    if log.rows.is_empty() {
        bail!("log has no rows to plot");
    }
    std::fs::create_dir_all(out_dir)?;
    let mut written = Vec::new();
    let jobs: Vec<(&str, Vec<Chart>, usize)> = vec![
        ("positions", vec![position_chart(log)], 1),
        ("yaw_error", vec![yaw_error_chart(log)], 1),
        ("health", health_charts(log), 3),
        ("thrusts", vec![thrust_chart(log)], 1),
    ];
    for (suffix, mut charts, cols) in jobs {
        let svg = render(&mut charts, cols);
        let path = out_dir.join(format!("{stem}_{suffix}.svg"));
        std::fs::write(&path, svg)?;
        written.push(path);
    }
    Ok(written)
}
