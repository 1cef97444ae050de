use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};

use crate::run::Manifest;

const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"];
const POINTS: usize = 200;
const W: f64 = 760.0;
const H: f64 = 480.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 230.0;
const TOP: f64 = 30.0;
const BOTTOM: f64 = 50.0;

/// Mean regret curve of all runs sharing a label.
#[derive(Clone, Debug, PartialEq)]
pub struct Series {
    pub label: String,
    pub runs: usize,
    pub points: Vec<(usize, f64)>,
    /// Least-squares slope of ln(regret) against ln(t) over the final decade.
    pub slope: Option<f64>,
}

#[derive(Debug)]
pub struct PlotOutput {
    pub svg: PathBuf,
    pub csv: PathBuf,
    pub series: Vec<Series>,
}

/// Plotted trial indices: log-spaced or evenly spaced, always with 1 and `n`.
pub fn sample_points(n: usize, log: bool) -> Vec<usize> {
    let mut ts: Vec<usize> = (0..POINTS)
        .map(|k| {
            let f = k as f64 / (POINTS - 1) as f64;
            if log {
                (n as f64).powf(f).round() as usize
            } else {
                (f * n as f64).ceil() as usize
            }
        })
        .map(|t| t.clamp(1, n))
        .collect();
    ts.dedup();
    ts
}

/// Ordinary least squares slope of `ln y` on `ln t` for points with `t >= t_max / 10` and `y > 0`.
pub fn final_decade_slope(points: &[(usize, f64)]) -> Option<f64> {
    let t_max = points.iter().map(|p| p.0).max()?;
    let xy: Vec<(f64, f64)> = points
        .iter()
        .filter(|(t, y)| *t as f64 >= t_max as f64 / 10.0 && *y > 0.0)
        .map(|(t, y)| ((*t as f64).ln(), y.ln()))
        .collect();
    if xy.len() < 2 {
        return None;
    }
    let n = xy.len() as f64;
    let mx = xy.iter().map(|p| p.0).sum::<f64>() / n;
    let my = xy.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = xy.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    let sxy: f64 = xy.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

pub fn collect_series(dirs: &[PathBuf], log: bool) -> Result<Vec<Series>> {
    let mut curves: BTreeMap<String, Vec<Vec<f64>>> = BTreeMap::new();
    for dir in dirs {
        let manifest = Manifest::load(dir)?;
        for record in manifest.runs(dir)? {
            if let Some(regret) = record.regret {
                curves.entry(record.meta.label).or_default().push(regret);
            }
        }
    }
    if curves.is_empty() {
        bail!("no runs with regret data");
    }
    Ok(curves
        .into_iter()
        .map(|(label, runs)| {
            let n = runs.iter().map(Vec::len).min().unwrap_or(0);
            let points: Vec<(usize, f64)> = if n == 0 {
                Vec::new()
            } else {
                sample_points(n, log)
                    .into_iter()
                    .map(|t| (t, runs.iter().map(|r| r[t - 1]).sum::<f64>() / runs.len() as f64))
                    .collect()
            };
            let slope = final_decade_slope(&points);
            Series { label, runs: runs.len(), points, slope }
        })
        .collect())
}

pub fn series_csv(series: &[Series]) -> String {
    let mut out = String::from("label,t,regret,runs\n");
    for s in series {
        for (t, y) in &s.points {
            let _ = writeln!(out, "{},{t},{y},{}", s.label, s.runs);
        }
    }
    out
}

pub fn render_svg(series: &[Series], log: bool) -> String {
    let t_max = series.iter().flat_map(|s| s.points.iter().map(|p| p.0)).max().unwrap_or(1).max(2) as f64;
    let ys = series.iter().flat_map(|s| s.points.iter().map(|p| p.1));
    let (y_min, y_max) = if log {
        let pos: Vec<f64> = ys.filter(|y| *y > 0.0).collect();
        let lo = pos.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = pos.iter().copied().fold(0.0, f64::max);
        if pos.is_empty() { (0.1, 1.0) } else { (lo.min(hi / 10.0), hi) }
    } else {
        let (lo, hi) = ys.fold((0.0f64, 0.0f64), |(a, b), y| (a.min(y), b.max(y)));
        (lo, if hi > lo { hi } else { lo + 1.0 })
    };
    let pw = W - LEFT - RIGHT;
    let ph = H - TOP - BOTTOM;
    let sx = |t: f64| {
        let f = if log { t.ln() / t_max.ln() } else { (t - 1.0) / (t_max - 1.0) };
        LEFT + f * pw
    };
    let sy = |y: f64| {
        let f = if log { (y.ln() - y_min.ln()) / (y_max.ln() - y_min.ln()) } else { (y - y_min) / (y_max - y_min) };
        TOP + (1.0 - f) * ph
    };

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect x="0" y="0" width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="black" stroke-width="1"/>"#
    );
    let _ = writeln!(svg, r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">trial t</text>"#, LEFT + pw / 2.0, H - 12.0);
    let _ = writeln!(
        svg,
        r#"<text x="18" y="{:.2}" text-anchor="middle" transform="rotate(-90 18 {:.2})">pseudo-regret</text>"#,
        TOP + ph / 2.0,
        TOP + ph / 2.0
    );
    for (v, anchor) in [(1.0, "start"), (t_max, "end")] {
        let _ = writeln!(svg, r#"<text x="{:.2}" y="{:.2}" text-anchor="{anchor}">{v}</text>"#, sx(v), TOP + ph + 16.0);
    }
    for v in [y_min, y_max] {
        let _ = writeln!(svg, r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{v:.4}</text>"#, LEFT - 6.0, sy(v) + 4.0);
    }
    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let pts: Vec<String> = s
            .points
            .iter()
            .filter(|(_, y)| !log || *y > 0.0)
            .map(|&(t, y)| format!("{:.2},{:.2}", sx(t as f64), sy(y)))
            .collect();
        let _ = writeln!(
            svg,
            r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
            pts.join(" ")
        );
        let ly = TOP + 14.0 + 18.0 * i as f64;
        let lx = W - RIGHT + 12.0;
        let _ = writeln!(
            svg,
            r#"<line x1="{lx:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="{color}" stroke-width="2"/>"#,
            ly - 4.0,
            lx + 18.0,
            ly - 4.0
        );
        let slope = s.slope.map_or_else(|| "n/a".to_string(), |v| format!("{v:.3}"));
        let _ = writeln!(svg, r#"<text x="{:.2}" y="{ly:.2}">{} (slope {slope})</text>"#, lx + 24.0, s.label);
    }
    svg.push_str("</svg>\n");
    svg
}

/// Writes `regret.svg` and `regret.csv` into `out`.
pub fn cmd_plot(dirs: &[PathBuf], out: &Path, log: bool) -> Result<PlotOutput> {
    let series = collect_series(dirs, log)?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let svg = out.join("regret.svg");
    let csv = out.join("regret.csv");
    fs::write(&svg, render_svg(&series, log))?;
    fs::write(&csv, series_csv(&series))?;
    Ok(PlotOutput { svg, csv, series })
}
