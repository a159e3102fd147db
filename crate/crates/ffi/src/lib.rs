//! C interface: load a fine-tuned checkpoint, forecast one window, score
//! forecasts.
//!
//! Every function returns an [`MtsmaeStatus`]. On failure a description is
//! kept per thread and can be read with [`mtsmae_last_error`]. Arrays are
//! row-major `f64` regardless of the checkpoint's element type.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use chrono::{DateTime, Duration, NaiveDateTime};

use mtsmae::data::{make_windows, TimeSeriesFrame};
use mtsmae::evaluation::{mae, mse};
use mtsmae::model::{ModelConfig, Mtsmae};
use mtsmae::numeric::{DType, Element, NdArray};
use mtsmae::training::{checkpoint_dtype, Checkpoint};
use mtsmae::{Error, ErrorKind};

/// Result of every call. Values 2 to 5 match the command-line exit codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MtsmaeStatus {
    Ok = 0,
    /// A required pointer was null or a length did not match.
    InvalidArgument = 1,
    Config = 2,
    Data = 3,
    Training = 4,
    Io = 5,
    /// The library panicked; the handle involved should be freed.
    Internal = 6,
}

/// Sizes a caller needs to lay out buffers for [`mtsmae_model_forecast`].
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct MtsmaeDims {
    pub input_len: usize,
    pub label_len: usize,
    pub pred_len: usize,
    pub d_x: usize,
    pub d_y: usize,
}

enum Inner {
    F32(Mtsmae<f32>),
    F64(Mtsmae<f64>),
}

/// Opaque model handle.
pub struct MtsmaeModel {
    inner: Inner,
}

impl MtsmaeModel {
    fn config(&self) -> &ModelConfig {
        match &self.inner {
            Inner::F32(m) => m.config(),
            Inner::F64(m) => m.config(),
        }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior nul removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> MtsmaeStatus {
    match e.kind() {
        ErrorKind::Config => MtsmaeStatus::Config,
        ErrorKind::Data => MtsmaeStatus::Data,
        ErrorKind::Training => MtsmaeStatus::Training,
        ErrorKind::Io => MtsmaeStatus::Io,
    }
}

#[derive(Debug)]
enum Failure {
    Invalid(String),
    Lib(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

fn invalid<T>(msg: impl Into<String>) -> Result<T, Failure> {
    Err(Failure::Invalid(msg.into()))
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> MtsmaeStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => MtsmaeStatus::Ok,
        Ok(Err(Failure::Invalid(msg))) => {
            set_error(msg);
            MtsmaeStatus::InvalidArgument
        }
        Ok(Err(Failure::Lib(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("internal error: {msg}"));
            MtsmaeStatus::Internal
        }
    }
}

/// # Safety
/// `p` must be null or valid for `len` reads.
unsafe fn slice<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], Failure> {
    if p.is_null() {
        return invalid(format!("{what} is null"));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

/// Library version as a static nul-terminated string.
#[no_mangle]
pub extern "C" fn mtsmae_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or null. Valid until the
/// next call into the library from the same thread.
#[no_mangle]
pub extern "C" fn mtsmae_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Loads a checkpoint written by fine-tuning and stores a new handle in
/// `*out`. Free it with [`mtsmae_model_free`].
///
/// # Safety
/// `path` must be a nul-terminated UTF-8 string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mtsmae_model_load(path: *const c_char, out: *mut *mut MtsmaeModel) -> MtsmaeStatus {
    guard(|| {
        if path.is_null() || out.is_null() {
            return invalid("path and out must not be null");
        }
        let path = match CStr::from_ptr(path).to_str() {
            Ok(p) => Path::new(p),
            Err(_) => return invalid("path is not valid UTF-8"),
        };
        let inner = match checkpoint_dtype(path)? {
            DType::F32 => Inner::F32(load::<f32>(path)?),
            DType::F64 => Inner::F64(load::<f64>(path)?),
        };
        *out = Box::into_raw(Box::new(MtsmaeModel { inner }));
        Ok(())
    })
}

fn load<T: Element>(path: &Path) -> Result<Mtsmae<T>, Error> {
    let ck = Checkpoint::<T>::load(path)?;
    Mtsmae::from_params(ck.config.model, ck.params)
}

/// Releases a handle. Null is ignored.
///
/// # Safety
/// `model` must come from [`mtsmae_model_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn mtsmae_model_free(model: *mut MtsmaeModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Writes the model's window sizes into `*dims`.
///
/// # Safety
/// `model` must be a live handle; `dims` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mtsmae_model_dims(model: *const MtsmaeModel, dims: *mut MtsmaeDims) -> MtsmaeStatus {
    guard(|| {
        if model.is_null() || dims.is_null() {
            return invalid("model and dims must not be null");
        }
        let c = (*model).config();
        *dims = MtsmaeDims {
            input_len: c.input_len,
            label_len: c.label_len,
            pred_len: c.pred_len,
            d_x: c.d_x,
            d_y: c.d_y,
        };
        Ok(())
    })
}

/// Forecasts `pred_len` steps after an observed window.
///
/// `x` holds `x_len = input_len * d_x` values (the model's own scale, so
/// standardized if it was trained that way). The first row is observed at
/// `start_unix` (seconds, UTC) and rows are `interval_minutes` apart; the
/// calendar of the forecast horizon continues that grid. The last
/// `label_len` rows of `x` serve as the decoder's known segment. `out`
/// receives `pred_len * d_y` values and `out_len` must equal that.
///
/// # Safety
/// `model` must be a live handle, `x` valid for `x_len` reads and `out`
/// valid for `out_len` writes.
#[no_mangle]
pub unsafe extern "C" fn mtsmae_model_forecast(
    model: *const MtsmaeModel,
    x: *const f64,
    x_len: usize,
    start_unix: i64,
    interval_minutes: u32,
    out: *mut f64,
    out_len: usize,
) -> MtsmaeStatus {
    guard(|| {
        if model.is_null() || out.is_null() {
            return invalid("model and out must not be null");
        }
        let model = &*model;
        let c = model.config();
        if x_len != c.input_len * c.d_x {
            return invalid(format!(
                "x_len {x_len}, expected input_len * d_x = {}",
                c.input_len * c.d_x
            ));
        }
        if out_len != c.pred_len * c.d_y {
            return invalid(format!(
                "out_len {out_len}, expected pred_len * d_y = {}",
                c.pred_len * c.d_y
            ));
        }
        if interval_minutes == 0 {
            return invalid("interval_minutes must be positive");
        }
        let x = slice(x, x_len, "x")?;
        let frame = window_frame(c, x, start_unix, interval_minutes)?;
        let y = match &model.inner {
            Inner::F32(m) => forecast(m, &frame)?,
            Inner::F64(m) => forecast(m, &frame)?,
        };
        std::slice::from_raw_parts_mut(out, out_len).copy_from_slice(&y);
        Ok(())
    })
}

/// Observed rows followed by a zero-filled horizon, on a regular grid.
fn window_frame(c: &ModelConfig, x: &[f64], start_unix: i64, interval: u32) -> Result<TimeSeriesFrame, Failure> {
    let Some(start) = DateTime::from_timestamp(start_unix, 0).map(|t| t.naive_utc()) else {
        return invalid(format!("start_unix {start_unix} is out of range"));
    };
    let rows = c.input_len + c.pred_len;
    let step = Duration::minutes(interval as i64);
    let timestamps: Vec<NaiveDateTime> = (0..rows as i32).map(|i| start + step * i).collect();
    let mut values = x.to_vec();
    values.resize(rows * c.d_x, 0.0);
    let names = (0..c.d_x).map(|j| format!("x{j}")).collect();
    Ok(TimeSeriesFrame::new(
        timestamps,
        NdArray::new(vec![rows, c.d_x], values)?,
        names,
    )?)
}

fn forecast<T: Element>(m: &Mtsmae<T>, frame: &TimeSeriesFrame) -> Result<Vec<f64>, Error> {
    let c = m.config();
    let windows = make_windows::<T>(frame, c.input_len, c.label_len, c.pred_len, 1)?;
    Ok(m.forecast(&windows.get(0))?.to_f64_vec())
}

fn metric(
    y: *const f64,
    yhat: *const f64,
    n: usize,
    d: usize,
    out: *mut f64,
    f: fn(&NdArray<f64>, &NdArray<f64>) -> mtsmae::Result<f64>,
) -> MtsmaeStatus {
    guard(|| {
        if out.is_null() {
            return invalid("out must not be null");
        }
        // SAFETY: caller contract of the public wrappers.
        let (y, yhat) = unsafe { (slice(y, n * d, "y")?, slice(yhat, n * d, "yhat")?) };
        let a = NdArray::new(vec![n, d], y.to_vec())?;
        let b = NdArray::new(vec![n, d], yhat.to_vec())?;
        let v = f(&a, &b)?;
        unsafe { *out = v };
        Ok(())
    })
}

/// `(1/n) Σ_i Σ_j (y - ŷ)² / d` over two `n x d` arrays.
///
/// # Safety
/// `y` and `yhat` must be valid for `n * d` reads, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn mtsmae_mse(
    y: *const f64,
    yhat: *const f64,
    n: usize,
    d: usize,
    out: *mut f64,
) -> MtsmaeStatus {
    metric(y, yhat, n, d, out, mse)
}

/// `(1/n) Σ_i Σ_j |y - ŷ| / d` over two `n x d` arrays.
///
/// # Safety
/// `y` and `yhat` must be valid for `n * d` reads, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn mtsmae_mae(
    y: *const f64,
    yhat: *const f64,
    n: usize,
    d: usize,
    out: *mut f64,
) -> MtsmaeStatus {
    metric(y, yhat, n, d, out, mae)
}
