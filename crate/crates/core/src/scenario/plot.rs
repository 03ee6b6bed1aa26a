//! Static SVG charts of scenario logs.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::timeseries::{LogError, TimeSeriesLog};

#[derive(Debug, Error)]
pub enum PlotError {
    #[error("log has no samples")]
    Empty,
    #[error(transparent)]
    Log(#[from] LogError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 240.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 110.0;
const TOP: f64 = 28.0;
const BOTTOM: f64 = 36.0;
const COLORS: [&str; 12] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf", "#000000", "#aec7e8"];

fn range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.filter(|v| v.is_finite()).fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        return (-1.0, 1.0);
    }
    if hi - lo < 1e-12 {
        let pad = lo.abs().max(1e-3) * 0.5;
        return (lo - pad, hi + pad);
    }
    let pad = 0.05 * (hi - lo);
    (lo - pad, hi + pad)
}

struct Frame {
    x0: f64,
    y0: f64,
    w: f64,
    h: f64,
    xr: (f64, f64),
    yr: (f64, f64),
}

impl Frame {
    fn px(&self, x: f64) -> f64 {
        self.x0 + (x - self.xr.0) / (self.xr.1 - self.xr.0) * self.w
    }

    fn py(&self, y: f64) -> f64 {
        self.y0 + self.h - (y - self.yr.0) / (self.yr.1 - self.yr.0) * self.h
    }

    fn axes(&self, out: &mut String, xlabel: &str, title: &str) {
        let _ = writeln!(out, r##"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="none" stroke="#444"/>"##, self.x0, self.y0, self.w, self.h);
        let _ =
            writeln!(out, r#"<text x="{:.2}" y="{:.2}" font-size="13" text-anchor="middle">{}</text>"#, self.x0 + self.w / 2.0, self.y0 - 10.0, escape(title));
        for k in 0..=4 {
            let f = k as f64 / 4.0;
            let (xv, yv) = (self.xr.0 + f * (self.xr.1 - self.xr.0), self.yr.0 + f * (self.yr.1 - self.yr.0));
            let (x, y) = (self.px(xv), self.py(yv));
            let _ = writeln!(out, r##"<line x1="{x:.2}" y1="{:.2}" x2="{x:.2}" y2="{:.2}" stroke="#ddd"/>"##, self.y0, self.y0 + self.h);
            let _ = writeln!(out, r##"<line x1="{:.2}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#ddd"/>"##, self.x0, self.x0 + self.w);
            let _ = writeln!(out, r#"<text x="{x:.2}" y="{:.2}" font-size="10" text-anchor="middle">{}</text>"#, self.y0 + self.h + 14.0, tick(xv));
            let _ = writeln!(out, r#"<text x="{:.2}" y="{:.2}" font-size="10" text-anchor="end">{}</text>"#, self.x0 - 4.0, y + 3.0, tick(yv));
        }
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" font-size="11" text-anchor="middle">{}</text>"#,
            self.x0 + self.w / 2.0,
            self.y0 + self.h + 30.0,
            escape(xlabel)
        );
    }

    fn polyline(&self, out: &mut String, xs: &[f64], ys: &[f64], color: &str, dashed: bool) {
        let pts: Vec<String> =
            xs.iter().zip(ys).filter(|(x, y)| x.is_finite() && y.is_finite()).map(|(x, y)| format!("{:.2},{:.2}", self.px(*x), self.py(*y))).collect();
        let dash = if dashed { r#" stroke-dasharray="6 4""# } else { "" };
        let _ = writeln!(out, r#"<polyline fill="none" stroke="{color}" stroke-width="1.4"{dash} points="{}"/>"#, pts.join(" "));
    }
}

fn tick(v: f64) -> String {
    let a = v.abs();
    if a != 0.0 && !(1e-3..1e4).contains(&a) {
        format!("{v:.2e}")
    } else {
        format!("{v:.3}")
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn header(out: &mut String, w: f64, h: f64) {
    let _ = writeln!(out, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w:.0}" height="{h:.0}" viewBox="0 0 {w:.0} {h:.0}" font-family="sans-serif">"#);
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
}

/// Stacked time-series panels, one per group of columns.
pub fn time_series_svg(log: &TimeSeriesLog, panels: &[(&str, &[&str])]) -> Result<String, PlotError> {
    if log.is_empty() {
        return Err(PlotError::Empty);
    }
    let t = log.column("t")?;
    let ph = HEIGHT;
    let mut out = String::new();
    header(&mut out, WIDTH, ph * panels.len() as f64);
    for (k, (title, cols)) in panels.iter().enumerate() {
        let series = cols.iter().map(|c| log.column(c)).collect::<Result<Vec<_>, _>>()?;
        let frame = Frame {
            x0: LEFT,
            y0: k as f64 * ph + TOP,
            w: WIDTH - LEFT - RIGHT,
            h: ph - TOP - BOTTOM,
            xr: (t[0], *t.last().expect("nonempty")),
            yr: range(series.iter().flatten().copied()),
        };
        frame.axes(&mut out, "t [s]", title);
        for (i, (s, name)) in series.iter().zip(cols.iter()).enumerate() {
            let color = COLORS[i % COLORS.len()];
            frame.polyline(&mut out, &t, s, color, false);
            let ly = frame.y0 + 12.0 + 13.0 * i as f64;
            let _ = writeln!(out, r#"<text x="{:.2}" y="{ly:.2}" font-size="11" fill="{color}">{}</text>"#, frame.x0 + frame.w + 8.0, escape(name));
        }
    }
    out.push_str("</svg>\n");
    Ok(out)
}

/// Top view of the shell path, with the reference overlaid when logged.
pub fn path_svg(log: &TimeSeriesLog, reference: bool) -> Result<String, PlotError> {
    if log.is_empty() {
        return Err(PlotError::Empty);
    }
    let (x, y) = (log.column("x")?, log.column("y")?);
    let reference = if reference { Some((log.column("ref_x")?, log.column("ref_y")?)) } else { None };
    let all_x = x.iter().chain(reference.iter().flat_map(|r| r.0.iter())).copied();
    let all_y = y.iter().chain(reference.iter().flat_map(|r| r.1.iter())).copied();
    let (mut xr, mut yr) = (range(all_x), range(all_y));
    // equal scale on both axes
    let side = (xr.1 - xr.0).max(yr.1 - yr.0);
    let (cx, cy) = (0.5 * (xr.0 + xr.1), 0.5 * (yr.0 + yr.1));
    xr = (cx - side / 2.0, cx + side / 2.0);
    yr = (cy - side / 2.0, cy + side / 2.0);
    let size = 480.0;
    let mut out = String::new();
    header(&mut out, size + LEFT + RIGHT, size + TOP + BOTTOM);
    let frame = Frame { x0: LEFT, y0: TOP, w: size, h: size, xr, yr };
    frame.axes(&mut out, "x [m]", "path (y vs x)");
    frame.polyline(&mut out, &x, &y, COLORS[0], false);
    let _ = writeln!(out, r#"<text x="{:.2}" y="{:.2}" font-size="11" fill="{}">shell</text>"#, LEFT + size + 8.0, TOP + 12.0, COLORS[0]);
    if let Some((rx, ry)) = reference {
        frame.polyline(&mut out, &rx, &ry, COLORS[1], true);
        let _ = writeln!(out, r#"<text x="{:.2}" y="{:.2}" font-size="11" fill="{}">reference</text>"#, LEFT + size + 8.0, TOP + 25.0, COLORS[1]);
    }
    out.push_str("</svg>\n");
    Ok(out)
}

fn write(path: PathBuf, text: String) -> Result<PathBuf, PlotError> {
    std::fs::write(&path, text).map_err(|source| PlotError::Io { path: path.clone(), source })?;
    Ok(path)
}

/// Pose, motor and path charts of a log, named after `stem`.
pub fn emit_plots(log: &TimeSeriesLog, stem: &str, dir: &Path) -> Result<Vec<PathBuf>, PlotError> {
    std::fs::create_dir_all(dir).map_err(|source| PlotError::Io { path: dir.into(), source })?;
    let mut files = Vec::new();
    let mut panels: Vec<(&str, &[&str])> = vec![("position [m]", &["x", "y", "z"]), ("attitude [rad]", &["roll", "pitch", "yaw"])];
    if log.has("err_z") {
        panels.push(("tracking error", &["err_x", "err_y", "err_z", "err_psi"]));
    }
    files.push(write(dir.join(format!("{stem}-pose.svg")), time_series_svg(log, &panels)?)?);
    let motors: Vec<String> = (1..=12).map(|m| format!("w{m}")).collect();
    let motors: Vec<&str> = motors.iter().map(String::as_str).collect();
    files.push(write(dir.join(format!("{stem}-motors.svg")), time_series_svg(log, &[("motor speed [rad/s]", &motors)])?)?);
    let with_ref = log.has("ref_x") && log.column("ref_x")?.iter().any(|v| *v != 0.0);
    files.push(write(dir.join(format!("{stem}-path.svg")), path_svg(log, with_ref)?)?);
    Ok(files)
}
