use chrono::{Datelike, NaiveDateTime, Timelike};
use serde::{Deserialize, Serialize};

use crate::embedding::STAMP_VOCAB;
use crate::error::{Error, Result};

/// Sampling interval of a series.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Frequency {
    Hourly,
    QuarterHourly,
    Minutes(u32),
}

impl Frequency {
    pub fn from_minutes(minutes: u32) -> Self {
        match minutes {
            60 => Frequency::Hourly,
            15 => Frequency::QuarterHourly,
            m => Frequency::Minutes(m),
        }
    }

    pub fn minutes(self) -> u32 {
        match self {
            Frequency::Hourly => 60,
            Frequency::QuarterHourly => 15,
            Frequency::Minutes(m) => m,
        }
    }

    /// Whether the minute-of-hour varies between samples.
    pub fn resolves_minutes(self) -> bool {
        !self.minutes().is_multiple_of(60)
    }

    pub fn steps_per_day(self) -> f64 {
        1440.0 / self.minutes() as f64
    }
}

/// Zero-based calendar components of one time step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct TimeMark {
    pub month: u8,
    pub day: u8,
    pub hour: u8,
    pub minute: u8,
}

impl TimeMark {
    pub fn from_datetime(ts: &NaiveDateTime) -> Self {
        TimeMark {
            month: ts.month0() as u8,
            day: ts.day0() as u8,
            hour: ts.hour() as u8,
            minute: ts.minute() as u8,
        }
    }

    fn components(self) -> [usize; 4] {
        [
            self.month as usize,
            self.day as usize,
            self.hour as usize,
            self.minute as usize,
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimeMarks {
    marks: Vec<TimeMark>,
    freq: Frequency,
}

impl TimeMarks {
    pub fn new(marks: Vec<TimeMark>, freq: Frequency) -> Result<Self> {
        for (i, m) in marks.iter().enumerate() {
            for (c, (v, vocab)) in m.components().iter().zip(STAMP_VOCAB).enumerate() {
                if *v >= vocab {
                    return Err(Error::Index {
                        id: *v,
                        size: vocab,
                        context: format!("time mark {i}, component {c}"),
                    });
                }
            }
        }
        Ok(TimeMarks { marks, freq })
    }

    pub fn len(&self) -> usize {
        self.marks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.marks.is_empty()
    }

    pub fn freq(&self) -> Frequency {
        self.freq
    }

    pub fn get(&self, i: usize) -> TimeMark {
        self.marks[i]
    }

    pub fn as_slice(&self) -> &[TimeMark] {
        &self.marks
    }

    pub fn slice(&self, start: usize, len: usize) -> TimeMarks {
        TimeMarks {
            marks: self.marks[start..start + len].to_vec(),
            freq: self.freq,
        }
    }

    /// Table row ids per component (month, day, hour, minute). The minute
    /// column is all zeros when the frequency does not resolve minutes.
    pub fn lookup_ids(&self) -> [Vec<usize>; 4] {
        let mut cols: [Vec<usize>; 4] = Default::default();
        for m in &self.marks {
            let c = m.components();
            for k in 0..3 {
                cols[k].push(c[k]);
            }
            cols[3].push(if self.freq.resolves_minutes() { c[3] } else { 0 });
        }
        cols
    }
}

pub fn extract_time_marks(timestamps: &[NaiveDateTime], freq: Frequency) -> TimeMarks {
    TimeMarks {
        marks: timestamps.iter().map(TimeMark::from_datetime).collect(),
        freq,
    }
}
