use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::error::{Error, Result};

pub const LOG_HEADER: &str = "epoch,split,loss,lr,wall_ms";

#[derive(Debug, Clone, PartialEq)]
pub struct LogRow {
    pub epoch: usize,
    pub split: &'static str,
    pub loss: f64,
    pub lr: f64,
    pub wall_ms: u128,
}

impl LogRow {
    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{:e},{:e},{}",
            self.epoch, self.split, self.loss, self.lr, self.wall_ms
        )
    }
}

/// Per-epoch training log, kept in memory and optionally appended to a CSV
/// file as rows arrive.
pub struct TrainLog {
    rows: Vec<LogRow>,
    sink: Option<(PathBuf, BufWriter<File>)>,
    started: Instant,
}

impl TrainLog {
    pub fn in_memory() -> Self {
        TrainLog {
            rows: Vec::new(),
            sink: None,
            started: Instant::now(),
        }
    }

    /// Creates `path` (truncating) and writes the header.
    pub fn to_file(path: &Path) -> Result<Self> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        writeln!(w, "{LOG_HEADER}")
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(path, e))?;
        Ok(TrainLog {
            rows: Vec::new(),
            sink: Some((path.to_path_buf(), w)),
            started: Instant::now(),
        })
    }

    pub fn record(&mut self, epoch: usize, split: &'static str, loss: f64, lr: f64) -> Result<()> {
        let row = LogRow {
            epoch,
            split,
            loss,
            lr,
            wall_ms: self.started.elapsed().as_millis(),
        };
        if let Some((path, w)) = &mut self.sink {
            writeln!(w, "{}", row.to_csv())
                .and_then(|_| w.flush())
                .map_err(|e| Error::io(path.as_path(), e))?;
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn rows(&self) -> &[LogRow] {
        &self.rows
    }

    /// Losses of one split in epoch order.
    pub fn losses(&self, split: &str) -> Vec<f64> {
        self.rows.iter().filter(|r| r.split == split).map(|r| r.loss).collect()
    }
}

/// Drops the `wall_ms` column so logs of two runs can be compared.
pub fn strip_wall_clock(csv: &str) -> String {
    csv.lines()
        .map(|l| l.rsplit_once(',').map_or(l, |(head, _)| head))
        .collect::<Vec<_>>()
        .join("\n")
}
