//! Series ingestion, calendar marks, normalization and windowing.

mod frame;
mod marks;
mod synth;
mod window;

pub use frame::{load_csv, write_csv, CsvSchema, SplitSpec, Splits, Standardizer, TimeSeriesFrame, DATE_FORMAT};
pub use marks::{extract_time_marks, Frequency, TimeMark, TimeMarks};
pub use synth::{synth_generate, SineComponent, SynthSpec};
pub use window::{make_windows, WindowSample, WindowSet};
