//! Static SVG learning curves.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{HarnessError, Result};
use crate::metrics::{read_table, Table};

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 440.0;
const MARGIN_L: f64 = 64.0;
const MARGIN_R: f64 = 170.0;
const MARGIN_T: f64 = 24.0;
const MARGIN_B: f64 = 48.0;
const COLORS: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"];

#[derive(Clone, Debug, PartialEq)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

/// Trailing moving average over at most `window` points; 0 and 1 are identity.
pub fn moving_average(ys: &[f64], window: usize) -> Vec<f64> {
    let w = window.max(1);
    (0..ys.len())
        .map(|i| {
            let lo = (i + 1).saturating_sub(w);
            // Mean of deviations from the window's first value, so a constant
            // window averages to itself exactly.
            let base = ys[lo];
            base + ys[lo..=i].iter().map(|y| y - base).sum::<f64>() / (i + 1 - lo) as f64
        })
        .collect()
}

/// Reads one series per file. Rows with a blank `column` are skipped.
pub fn load_series(paths: &[PathBuf], column: &str, window: usize) -> Result<Vec<Series>> {
    if paths.is_empty() {
        return Err(HarnessError::Plot("no metrics files given".into()));
    }
    let mut header: Option<(PathBuf, Vec<String>)> = None;
    let mut out = Vec::new();
    for p in paths {
        let t: Table = read_table(p)?;
        match &header {
            None => header = Some((p.clone(), t.header.clone())),
            Some((first, h)) if *h != t.header => {
                return Err(HarnessError::Plot(format!(
                    "{} has a different schema from {}",
                    p.display(),
                    first.display()
                )))
            }
            _ => {}
        }
        let (xi, yi) = match (t.column("iteration"), t.column(column)) {
            (Some(x), Some(y)) => (x, y),
            _ => return Err(HarnessError::Plot(format!("{} has no `{column}` column", p.display()))),
        };
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for (n, row) in t.rows.iter().enumerate() {
            let y = &row[yi];
            if y.is_empty() {
                continue;
            }
            let parse = |s: &str| {
                s.parse::<f64>()
                    .map_err(|_| HarnessError::Plot(format!("{}: bad number `{s}` on row {}", p.display(), n + 2)))
            };
            xs.push(parse(&row[xi])?);
            ys.push(parse(y)?);
        }
        let ys = moving_average(&ys, window);
        out.push(Series {
            label: label_for(p),
            points: xs.into_iter().zip(ys).collect(),
        });
    }
    Ok(out)
}

/// File stem, or the parent directory name for the usual `<run>/metrics.csv`.
fn label_for(p: &Path) -> String {
    let stem = p.file_stem().and_then(|s| s.to_str()).unwrap_or("series");
    if stem == "metrics" {
        if let Some(dir) = p.parent().and_then(|d| d.file_name()).and_then(|s| s.to_str()) {
            return dir.to_string();
        }
    }
    stem.to_string()
}

fn nice_ticks(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let span = (hi - lo).max(1e-12);
    let raw = span / n as f64;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0].iter().map(|m| m * mag).find(|s| *s >= raw).unwrap_or(10.0 * mag);
    let mut t = (lo / step).ceil() * step;
    let mut out = Vec::new();
    while t <= hi + step * 1e-9 {
        out.push(if t.abs() < step * 1e-9 { 0.0 } else { t });
        t += step;
    }
    out
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

pub fn render_svg(series: &[Series], column: &str) -> String {
    let all = series.iter().flat_map(|s| s.points.iter());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in all {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if !x0.is_finite() {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    if x1 - x0 < 1e-12 {
        x1 = x0 + 1.0;
    }
    if y1 - y0 < 1e-12 {
        y0 -= 0.5;
        y1 += 0.5;
    }
    let pw = WIDTH - MARGIN_L - MARGIN_R;
    let ph = HEIGHT - MARGIN_T - MARGIN_B;
    let sx = |x: f64| MARGIN_L + (x - x0) / (x1 - x0) * pw;
    let sy = |y: f64| MARGIN_T + (1.0 - (y - y0) / (y1 - y0)) * ph;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<g class="axes" stroke="black"><line x1="{l}" y1="{b}" x2="{r}" y2="{b}"/><line x1="{l}" y1="{t}" x2="{l}" y2="{b}"/></g>"#,
        l = MARGIN_L,
        r = MARGIN_L + pw,
        t = MARGIN_T,
        b = MARGIN_T + ph
    );
    for t in nice_ticks(x0, x1, 6) {
        let x = sx(t);
        let _ = writeln!(
            s,
            r#"<line x1="{x:.2}" y1="{b}" x2="{x:.2}" y2="{b2}" stroke="black"/><text x="{x:.2}" y="{ty}" text-anchor="middle">{t}</text>"#,
            b = MARGIN_T + ph,
            b2 = MARGIN_T + ph + 5.0,
            ty = MARGIN_T + ph + 18.0
        );
    }
    for t in nice_ticks(y0, y1, 5) {
        let y = sy(t);
        let _ = writeln!(
            s,
            r##"<line x1="{l}" y1="{y:.2}" x2="{r}" y2="{y:.2}" stroke="#ddd"/><text x="{tx}" y="{y:.2}" text-anchor="end" dominant-baseline="middle">{t}</text>"##,
            l = MARGIN_L,
            r = MARGIN_L + pw,
            tx = MARGIN_L - 6.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">iteration</text>"#,
        MARGIN_L + pw / 2.0,
        HEIGHT - 10.0
    );
    let _ = writeln!(
        s,
        r#"<text x="16" y="{y}" text-anchor="middle" transform="rotate(-90 16 {y})">{}</text>"#,
        escape(column),
        y = MARGIN_T + ph / 2.0
    );
    for (i, ser) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let pts: Vec<String> = ser.points.iter().map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y))).collect();
        let _ = writeln!(
            s,
            r#"<polyline class="series" fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
            pts.join(" ")
        );
        let ly = MARGIN_T + 10.0 + 18.0 * i as f64;
        let lx = MARGIN_L + pw + 12.0;
        let _ = writeln!(
            s,
            r#"<g class="legend"><line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="3"/><text x="{}" y="{ly}" dominant-baseline="middle">{}</text></g>"#,
            lx + 20.0,
            lx + 26.0,
            escape(&ser.label)
        );
    }
    s.push_str("</svg>\n");
    s
}

pub fn emit_plots(paths: &[PathBuf], column: &str, window: usize, out: &Path) -> Result<()> {
    let series = load_series(paths, column, window)?;
    std::fs::write(out, render_svg(&series, column)).map_err(|e| HarnessError::Io(format!("{}: {e}", out.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn moving_average_examples() {
        assert_eq!(moving_average(&[3.0; 25], 10), vec![3.0; 25]);
        assert_eq!(moving_average(&[1.0, 2.0, 3.0, 4.0], 2), vec![1.0, 1.5, 2.5, 3.5]);
        assert_eq!(moving_average(&[1.0, 5.0], 0), vec![1.0, 5.0]);
    }

    #[test]
    fn ticks_cover_range() {
        assert_eq!(nice_ticks(0.0, 100.0, 5), vec![0.0, 20.0, 40.0, 60.0, 80.0, 100.0]);
        assert!(nice_ticks(-0.3, 0.7, 4).contains(&0.0));
    }
}
