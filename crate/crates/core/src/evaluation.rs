//! Forecast metrics, rolling evaluation and report files.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;

use crate::data::{Standardizer, WindowSample, WindowSet};
use crate::error::{Error, Result};
use crate::model::Mtsmae;
use crate::numeric::{Element, NdArray};

fn check_pair<T: Element>(y: &NdArray<T>, yhat: &NdArray<T>) -> Result<(usize, usize)> {
    if y.shape() != yhat.shape() || y.rank() != 2 {
        return Err(Error::dim(format!(
            "metric inputs must be equal [n, d] arrays, got {:?} and {:?}",
            y.shape(),
            yhat.shape()
        )));
    }
    Ok((y.shape()[0], y.shape()[1]))
}

fn mean_over_rows<T: Element>(y: &NdArray<T>, yhat: &NdArray<T>, f: impl Fn(f64) -> f64) -> Result<f64> {
    let (n, d) = check_pair(y, yhat)?;
    if n == 0 || d == 0 {
        return Err(Error::dim("metric over an empty array"));
    }
    let mut total = 0.0;
    for i in 0..n {
        for j in 0..d {
            total += f(y.at2(i, j).as_f64() - yhat.at2(i, j).as_f64()) / d as f64;
        }
    }
    Ok(total / n as f64)
}

/// `(1/n) Σ_i Σ_j (y - ŷ)² / d`
pub fn mse<T: Element>(y: &NdArray<T>, yhat: &NdArray<T>) -> Result<f64> {
    mean_over_rows(y, yhat, |e| e * e)
}

/// `(1/n) Σ_i Σ_j |y - ŷ| / d`
pub fn mae<T: Element>(y: &NdArray<T>, yhat: &NdArray<T>) -> Result<f64> {
    mean_over_rows(y, yhat, f64::abs)
}

/// Anything that maps an input window to an `[L_y, d]` forecast.
pub trait Forecaster<T>: Sync {
    fn forecast(&self, sample: &WindowSample<T>) -> Result<NdArray<T>>;
}

impl<T: Element> Forecaster<T> for Mtsmae<T> {
    fn forecast(&self, sample: &WindowSample<T>) -> Result<NdArray<T>> {
        Mtsmae::forecast(self, sample)
    }
}

/// Repeats the last observed row `L_y` times.
pub fn persistence_baseline<T: Element>(x_enc: &NdArray<T>, pred_len: usize) -> Result<NdArray<T>> {
    if x_enc.rank() != 2 || x_enc.rows() == 0 {
        return Err(Error::dim(format!(
            "persistence needs a non-empty [L, d] window, got {:?}",
            x_enc.shape()
        )));
    }
    let last = x_enc.row(x_enc.rows() - 1);
    let data = (0..pred_len).flat_map(|_| last.iter().copied()).collect();
    NdArray::new(vec![pred_len, last.len()], data)
}

/// Forecaster wrapper around [`persistence_baseline`].
pub struct Persistence;

impl<T: Element> Forecaster<T> for Persistence {
    fn forecast(&self, sample: &WindowSample<T>) -> Result<NdArray<T>> {
        persistence_baseline(&sample.x_enc, sample.y_true.rows())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WindowMetrics {
    pub window_start: usize,
    pub mse: f64,
    pub mae: f64,
}

/// Truth and forecast of one window, in reporting units.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowTrace {
    pub window_start: usize,
    pub y_true: NdArray<f64>,
    pub y_pred: NdArray<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub windows: Vec<WindowMetrics>,
    pub mse: f64,
    pub mae: f64,
    pub fingerprint: String,
    pub traces: Vec<WindowTrace>,
    /// `(mse, mae)` of a reference forecaster on the same windows.
    pub baseline: Option<(f64, f64)>,
}

#[derive(Debug, Clone, Default)]
pub struct EvalOptions<'a> {
    /// Undo standardization before scoring.
    pub destandardize: Option<&'a Standardizer>,
    pub parallel: bool,
    /// Free-form identifier of the configuration that produced the model.
    pub fingerprint: String,
}

/// Means of per-window metrics.
pub fn aggregate(windows: &[WindowMetrics]) -> (f64, f64) {
    let n = windows.len() as f64;
    let mse = windows.iter().map(|w| w.mse).sum::<f64>() / n;
    let mae = windows.iter().map(|w| w.mae).sum::<f64>() / n;
    (mse, mae)
}

fn score_window<T: Element, F: Forecaster<T> + ?Sized>(
    model: &F,
    sample: &WindowSample<T>,
    scale: Option<&Standardizer>,
) -> Result<(WindowMetrics, WindowTrace)> {
    let pred = model.forecast(sample)?;
    let mut y_true = sample.y_true.cast::<f64>();
    let mut y_pred = pred.cast::<f64>();
    if let Some(s) = scale {
        y_true = s.invert(&y_true)?;
        y_pred = s.invert(&y_pred)?;
    }
    let m = WindowMetrics {
        window_start: sample.start,
        mse: mse(&y_true, &y_pred)?,
        mae: mae(&y_true, &y_pred)?,
    };
    Ok((
        m,
        WindowTrace {
            window_start: sample.start,
            y_true,
            y_pred,
        },
    ))
}

/// Scores every window of `data` and averages per-window metrics.
pub fn rolling_evaluate<T: Element, F: Forecaster<T> + ?Sized>(
    model: &F,
    data: &WindowSet<T>,
    opts: &EvalOptions<'_>,
) -> Result<EvalReport> {
    let scored: Vec<Result<(WindowMetrics, WindowTrace)>> = if opts.parallel {
        (0..data.len())
            .into_par_iter()
            .map(|i| score_window(model, &data.get(i), opts.destandardize))
            .collect()
    } else {
        data.iter()
            .map(|s| score_window(model, &s, opts.destandardize))
            .collect()
    };
    let mut windows = Vec::with_capacity(scored.len());
    let mut traces = Vec::with_capacity(scored.len());
    for r in scored {
        let (m, t) = r?;
        windows.push(m);
        traces.push(t);
    }
    if windows.is_empty() {
        return Err(Error::data("no evaluation windows"));
    }
    let (mse, mae) = aggregate(&windows);
    Ok(EvalReport {
        windows,
        mse,
        mae,
        fingerprint: opts.fingerprint.clone(),
        traces,
        baseline: None,
    })
}

/// Stable 64-bit FNV-1a digest, hex encoded.
pub fn fingerprint(bytes: &[u8]) -> String {
    let h = bytes.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, &b| {
        (h ^ b as u64).wrapping_mul(0x0100_0000_01b3)
    });
    format!("{h:016x}")
}

pub const CHART_WIDTH: f64 = 1200.0;
pub const CHART_HEIGHT: f64 = 400.0;

#[derive(Serialize)]
struct Summary<'a> {
    mse: f64,
    mae: f64,
    windows: usize,
    fingerprint: &'a str,
    chart_dim: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    baseline_mse: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    baseline_mae: Option<f64>,
}

/// Writes `metrics.csv`, `predictions.csv`, `chart.svg` and `summary.json`
/// into `out_dir`; returns the paths written.
pub fn emit_report(report: &EvalReport, out_dir: &Path, chart_dim: usize) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let d = report.traces.first().map_or(0, |t| t.y_true.last_dim());
    if chart_dim >= d.max(1) {
        return Err(Error::config(format!(
            "chart dimension {chart_dim} out of range for {d} features"
        )));
    }
    let write = |name: &str, body: String| -> Result<PathBuf> {
        let path = out_dir.join(name);
        std::fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    };

    let mut metrics = String::from("window_start,mse,mae\n");
    for w in &report.windows {
        writeln!(metrics, "{},{},{}", w.window_start, w.mse, w.mae).expect("string write");
    }
    let mut preds = String::from("window_start,step,dim,y_true,y_pred\n");
    for t in &report.traces {
        for step in 0..t.y_true.rows() {
            for dim in 0..t.y_true.last_dim() {
                writeln!(
                    preds,
                    "{},{},{},{},{}",
                    t.window_start,
                    step,
                    dim,
                    t.y_true.at2(step, dim),
                    t.y_pred.at2(step, dim)
                )
                .expect("string write");
            }
        }
    }
    let summary = serde_json::to_string_pretty(&Summary {
        mse: report.mse,
        mae: report.mae,
        windows: report.windows.len(),
        fingerprint: &report.fingerprint,
        chart_dim,
        baseline_mse: report.baseline.map(|b| b.0),
        baseline_mae: report.baseline.map(|b| b.1),
    })
    .expect("plain struct serializes");

    Ok(vec![
        write("metrics.csv", metrics)?,
        write("predictions.csv", preds)?,
        write("chart.svg", render_chart(report, chart_dim))?,
        write("summary.json", summary + "\n")?,
    ])
}

/// One-step-ahead truth and forecast of `dim` across consecutive windows,
/// drawn as two polylines.
pub fn render_chart(report: &EvalReport, dim: usize) -> String {
    let truth: Vec<f64> = report.traces.iter().map(|t| t.y_true.at2(0, dim)).collect();
    let pred: Vec<f64> = report.traces.iter().map(|t| t.y_pred.at2(0, dim)).collect();
    let (w, h, m) = (CHART_WIDTH, CHART_HEIGHT, 50.0);
    let lo = truth.iter().chain(&pred).copied().fold(f64::INFINITY, f64::min);
    let hi = truth.iter().chain(&pred).copied().fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    let n = truth.len().max(2) - 1;
    let points = |ys: &[f64]| {
        ys.iter()
            .enumerate()
            .map(|(i, y)| {
                let x = m + (w - 2.0 * m) * i as f64 / n as f64;
                let y = h - m - (h - 2.0 * m) * (y - lo) / span;
                format!("{x:.2},{y:.2}")
            })
            .collect::<Vec<_>>()
            .join(" ")
    };
    let mut svg = String::new();
    writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#
    )
    .expect("string write");
    writeln!(svg, r#"<rect width="{w}" height="{h}" fill="white"/>"#).expect("string write");
    writeln!(
        svg,
        r#"<line x1="{m}" y1="{y}" x2="{x}" y2="{y}" stroke="black"/><line x1="{m}" y1="{m}" x2="{m}" y2="{y}" stroke="black"/>"#,
        x = w - m,
        y = h - m
    )
    .expect("string write");
    writeln!(
        svg,
        r#"<text x="{}" y="{}" text-anchor="middle" font-size="14">window start</text>"#,
        w / 2.0,
        h - 12.0
    )
    .expect("string write");
    writeln!(
        svg,
        r#"<text x="16" y="{}" text-anchor="middle" font-size="14" transform="rotate(-90 16 {})">value (dim {dim})</text>"#,
        h / 2.0,
        h / 2.0
    )
    .expect("string write");
    writeln!(svg, r#"<text x="{m}" y="{}" font-size="12">{hi:.3}</text>"#, m - 8.0).expect("string write");
    writeln!(
        svg,
        r#"<text x="{m}" y="{}" font-size="12">{lo:.3}</text>"#,
        h - m + 16.0
    )
    .expect("string write");
    writeln!(
        svg,
        r#"<polyline fill="none" stroke="royalblue" stroke-width="1.5" points="{}"><title>truth</title></polyline>"#,
        points(&truth)
    )
    .expect("string write");
    writeln!(
        svg,
        r#"<polyline fill="none" stroke="darkorange" stroke-width="1.5" points="{}"><title>prediction</title></polyline>"#,
        points(&pred)
    )
    .expect("string write");
    svg.push_str("</svg>\n");
    svg
}
