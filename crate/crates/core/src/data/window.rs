use super::frame::TimeSeriesFrame;
use super::marks::TimeMarks;
use crate::error::{Error, Result};
use crate::numeric::{Element, NdArray};

/// One training or evaluation instance.
///
/// The label segment is the trailing `L_label` steps of the encoder window
/// and the target immediately follows the encoder window.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowSample<T> {
    pub start: usize,
    pub x_enc: NdArray<T>,
    pub enc_marks: TimeMarks,
    pub x_label: NdArray<T>,
    pub label_marks: TimeMarks,
    pub y_true: NdArray<T>,
    pub y_marks: TimeMarks,
}

/// Lazily materialized stride-`s` windows over one contiguous series.
#[derive(Debug, Clone)]
pub struct WindowSet<T> {
    values: NdArray<T>,
    marks: TimeMarks,
    input_len: usize,
    label_len: usize,
    pred_len: usize,
    stride: usize,
}

impl<T: Element> WindowSet<T> {
    pub fn len(&self) -> usize {
        (self.values.rows() - self.input_len - self.pred_len) / self.stride + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn input_len(&self) -> usize {
        self.input_len
    }

    pub fn label_len(&self) -> usize {
        self.label_len
    }

    pub fn pred_len(&self) -> usize {
        self.pred_len
    }

    pub fn n_features(&self) -> usize {
        self.values.last_dim()
    }

    /// Row offset of window `i` in the underlying series.
    pub fn start_of(&self, i: usize) -> usize {
        i * self.stride
    }

    pub fn get(&self, i: usize) -> WindowSample<T> {
        assert!(i < self.len(), "window {i} out of range ({} windows)", self.len());
        let s = self.start_of(i);
        let enc_end = s + self.input_len;
        let label_start = enc_end - self.label_len;
        let rows = |a: usize, n: usize| self.values.slice_rows(a, n).expect("window in bounds");
        WindowSample {
            start: s,
            x_enc: rows(s, self.input_len),
            enc_marks: self.marks.slice(s, self.input_len),
            x_label: rows(label_start, self.label_len),
            label_marks: self.marks.slice(label_start, self.label_len),
            y_true: rows(enc_end, self.pred_len),
            y_marks: self.marks.slice(enc_end, self.pred_len),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = WindowSample<T>> + '_ {
        (0..self.len()).map(|i| self.get(i))
    }
}

pub fn make_windows<T: Element>(
    frame: &TimeSeriesFrame,
    input_len: usize,
    label_len: usize,
    pred_len: usize,
    stride: usize,
) -> Result<WindowSet<T>> {
    if stride == 0 || input_len == 0 || pred_len == 0 {
        return Err(Error::config("window lengths and stride must be positive"));
    }
    if label_len > input_len {
        return Err(Error::config(format!(
            "label length {label_len} exceeds input length {input_len}"
        )));
    }
    if frame.len() < input_len + pred_len {
        return Err(Error::data(format!(
            "no windows: series of {} rows is shorter than input {} + forecast {}",
            frame.len(),
            input_len,
            pred_len
        )));
    }
    Ok(WindowSet {
        values: frame.values().cast(),
        marks: frame.marks(),
        input_len,
        label_len,
        pred_len,
        stride,
    })
}
