use std::ops::Range;
use std::path::Path;

use chrono::NaiveDateTime;
use serde::{Deserialize, Serialize};

use super::marks::{extract_time_marks, Frequency, TimeMarks};
use crate::error::{Error, Result};
use crate::numeric::NdArray;

pub const DATE_FORMAT: &str = "%Y-%m-%d %H:%M:%S";

/// A loaded multivariate series. Values stay in 64-bit until windowed.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeriesFrame {
    timestamps: Vec<NaiveDateTime>,
    values: NdArray<f64>,
    names: Vec<String>,
    freq: Frequency,
}

impl TimeSeriesFrame {
    /// Validates finiteness, ordering and uniform spacing, and infers the
    /// frequency from the spacing (hourly when fewer than two rows).
    pub fn new(timestamps: Vec<NaiveDateTime>, values: NdArray<f64>, names: Vec<String>) -> Result<Self> {
        let n = timestamps.len();
        if values.rank() != 2 || values.shape()[0] != n || values.shape()[1] != names.len() {
            return Err(Error::data(format!(
                "frame values {:?} do not match {} timestamps and {} names",
                values.shape(),
                n,
                names.len()
            )));
        }
        if let Some(pos) = values.data().iter().position(|v| !v.is_finite()) {
            let d = names.len();
            return Err(Error::data(format!(
                "non-finite value at row {}, column {}",
                pos / d,
                names[pos % d]
            )));
        }
        let freq = if n < 2 {
            Frequency::Hourly
        } else {
            let step = timestamps[1] - timestamps[0];
            for (i, pair) in timestamps.windows(2).enumerate() {
                let delta = pair[1] - pair[0];
                if delta <= chrono::TimeDelta::zero() {
                    return Err(Error::data(format!(
                        "timestamps not strictly increasing at row {}",
                        i + 1
                    )));
                }
                if delta != step {
                    return Err(Error::data(format!(
                        "non-uniform spacing at row {}: {} vs {}",
                        i + 1,
                        delta,
                        step
                    )));
                }
            }
            let minutes = step.num_minutes();
            if minutes <= 0 || step.num_seconds() % 60 != 0 {
                return Err(Error::data(format!("unsupported sampling interval {step}")));
            }
            Frequency::from_minutes(minutes as u32)
        };
        Ok(TimeSeriesFrame {
            timestamps,
            values,
            names,
            freq,
        })
    }

    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.names.len()
    }

    pub fn timestamps(&self) -> &[NaiveDateTime] {
        &self.timestamps
    }

    pub fn values(&self) -> &NdArray<f64> {
        &self.values
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn freq(&self) -> Frequency {
        self.freq
    }

    pub fn marks(&self) -> TimeMarks {
        extract_time_marks(&self.timestamps, self.freq)
    }

    pub fn slice(&self, range: Range<usize>) -> Result<Self> {
        if range.end > self.len() || range.start > range.end {
            return Err(Error::data(format!(
                "slice {range:?} out of bounds for {} rows",
                self.len()
            )));
        }
        Ok(TimeSeriesFrame {
            timestamps: self.timestamps[range.clone()].to_vec(),
            values: self.values.slice_rows(range.start, range.len())?,
            names: self.names.clone(),
            freq: self.freq,
        })
    }

    pub fn with_values(&self, values: NdArray<f64>) -> Result<Self> {
        TimeSeriesFrame::new(self.timestamps.clone(), values, self.names.clone())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvSchema {
    /// Moved to the last column when set; otherwise the file's last column
    /// is the target.
    #[serde(default)]
    pub target: Option<String>,
}

/// Reads a comma-separated file whose header starts with `date` and whose
/// first column holds `YYYY-MM-DD HH:MM:SS` timestamps.
pub fn load_csv(path: &Path, schema: &CsvSchema) -> Result<TimeSeriesFrame> {
    let mut reader = csv::ReaderBuilder::new()
        .flexible(true)
        .from_path(path)
        .map_err(|e| csv_err(path, e))?;
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| csv_err(path, e))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    if header.len() < 2 || header[0] != "date" {
        return Err(Error::data(format!(
            "{}: header must start with \"date\" followed by at least one feature",
            path.display()
        )));
    }
    let d = header.len() - 1;
    let mut names: Vec<String> = header[1..].to_vec();
    let mut timestamps = Vec::new();
    let mut values = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| csv_err(path, e))?;
        if rec.len() != d + 1 {
            return Err(Error::data(format!(
                "{}:{line}: expected {} fields, found {}",
                path.display(),
                d + 1,
                rec.len()
            )));
        }
        let ts = NaiveDateTime::parse_from_str(rec[0].trim(), DATE_FORMAT)
            .map_err(|e| Error::data(format!("{}:{line}: bad timestamp {:?}: {e}", path.display(), &rec[0])))?;
        timestamps.push(ts);
        for (c, field) in rec.iter().skip(1).enumerate() {
            let v: f64 = field.trim().parse().map_err(|_| {
                Error::data(format!(
                    "{}:{line}: column {} is not numeric: {:?}",
                    path.display(),
                    names[c],
                    field
                ))
            })?;
            if !v.is_finite() {
                return Err(Error::data(format!(
                    "{}:{line}: non-finite value in column {}",
                    path.display(),
                    names[c]
                )));
            }
            values.push(v);
        }
    }
    let n = timestamps.len();
    if let Some(target) = &schema.target {
        let pos = names
            .iter()
            .position(|nm| nm == target)
            .ok_or_else(|| Error::data(format!("{}: no column named {target}", path.display())))?;
        let order: Vec<usize> = (0..d).filter(|&c| c != pos).chain([pos]).collect();
        let mut reordered = Vec::with_capacity(values.len());
        for r in 0..n {
            reordered.extend(order.iter().map(|&c| values[r * d + c]));
        }
        values = reordered;
        names = order.iter().map(|&c| names[c].clone()).collect();
    }
    TimeSeriesFrame::new(timestamps, NdArray::new(vec![n, d], values)?, names)
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map(|p| p.line());
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::data(format!("{}:{}: {:?}", path.display(), line.unwrap_or(0), other)),
    }
}

pub fn write_csv(frame: &TimeSeriesFrame, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    let mut header = vec!["date".to_string()];
    header.extend(frame.names().iter().cloned());
    w.write_record(&header).map_err(|e| csv_err(path, e))?;
    for (r, ts) in frame.timestamps().iter().enumerate() {
        let mut rec = vec![ts.format(DATE_FORMAT).to_string()];
        rec.extend(frame.values().row(r).iter().map(|v| v.to_string()));
        w.write_record(&rec).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Chronological train/val/test boundaries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SplitSpec {
    /// 30-day months converted to rows at the frame's frequency.
    Months {
        train: f64,
        val: f64,
        test: f64,
    },
    Rows {
        train: usize,
        val: usize,
        test: usize,
    },
    Ratios {
        train: f64,
        val: f64,
        test: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Splits {
    pub train: Range<usize>,
    pub val: Range<usize>,
    pub test: Range<usize>,
}

impl SplitSpec {
    pub fn ett() -> Self {
        SplitSpec::Months {
            train: 12.0,
            val: 4.0,
            test: 4.0,
        }
    }

    pub fn ecl() -> Self {
        SplitSpec::Months {
            train: 15.0,
            val: 3.0,
            test: 4.0,
        }
    }

    pub fn wth() -> Self {
        SplitSpec::Months {
            train: 28.0,
            val: 10.0,
            test: 10.0,
        }
    }

    pub fn resolve(&self, n: usize, freq: Frequency) -> Result<Splits> {
        let (train, val, test) = match *self {
            SplitSpec::Rows { train, val, test } => (train, val, test),
            SplitSpec::Months { train, val, test } => {
                let per_month = 30.0 * freq.steps_per_day();
                let rows = |m: f64| (m * per_month).round() as usize;
                (rows(train), rows(val), rows(test))
            }
            SplitSpec::Ratios { train, val, test } => {
                if [train, val, test].iter().any(|r| !(0.0..=1.0).contains(r)) || train + val + test > 1.0 + 1e-9 {
                    return Err(Error::config(format!(
                        "split ratios {train}/{val}/{test} must be in [0, 1] and sum to at most 1"
                    )));
                }
                let rows = |r: f64| (r * n as f64).floor() as usize;
                (rows(train), rows(val), rows(test))
            }
        };
        if train == 0 || train + val + test > n {
            return Err(Error::data(format!(
                "split {train}/{val}/{test} rows does not fit a series of {n} rows"
            )));
        }
        Ok(Splits {
            train: 0..train,
            val: train..train + val,
            test: train + val..train + val + test,
        })
    }
}

/// Per-feature zero-mean unit-variance scaling fitted on training rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    /// Population statistics; a zero std is replaced by 1.
    pub fn fit(train: &NdArray<f64>) -> Result<Self> {
        let n = train.rows();
        if n == 0 || train.rank() != 2 {
            return Err(Error::data("cannot fit a standardizer on an empty slice"));
        }
        let d = train.shape()[1];
        let mut mean = vec![0.0; d];
        for r in 0..n {
            for (m, v) in mean.iter_mut().zip(train.row(r)) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut var = vec![0.0; d];
        for r in 0..n {
            for c in 0..d {
                var[c] += (train.row(r)[c] - mean[c]).powi(2);
            }
        }
        let std = var
            .iter()
            .map(|v| {
                let s = (v / n as f64).sqrt();
                if s > 0.0 {
                    s
                } else {
                    1.0
                }
            })
            .collect();
        Ok(Standardizer { mean, std })
    }

    fn map(&self, x: &NdArray<f64>, f: impl Fn(f64, f64, f64) -> f64) -> Result<NdArray<f64>> {
        let d = self.mean.len();
        if x.last_dim() != d {
            return Err(Error::dim(format!(
                "standardizer has {d} features, array has shape {:?}",
                x.shape()
            )));
        }
        let data = x
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| f(v, self.mean[i % d], self.std[i % d]))
            .collect();
        NdArray::new(x.shape().to_vec(), data)
    }

    pub fn apply(&self, x: &NdArray<f64>) -> Result<NdArray<f64>> {
        self.map(x, |v, m, s| (v - m) / s)
    }

    pub fn invert(&self, x: &NdArray<f64>) -> Result<NdArray<f64>> {
        self.map(x, |v, m, s| v * s + m)
    }

    pub fn apply_frame(&self, frame: &TimeSeriesFrame) -> Result<TimeSeriesFrame> {
        frame.with_values(self.apply(frame.values())?)
    }
}
