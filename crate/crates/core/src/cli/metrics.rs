//! JSON-lines metrics log.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learner::UpdateReport;

/// One line of `metrics.jsonl`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    #[serde(flatten)]
    pub report: UpdateReport,
    /// Milliseconds since the run (or resumed run) started; `null` unless
    /// `run.wall_clock` is set.
    pub wall_ms: Option<u64>,
}

/// Append-only writer, flushed after every record.
pub struct MetricsWriter {
    file: std::fs::File,
    path: std::path::PathBuf,
}

impl MetricsWriter {
    /// Opens `path`, keeping only records with `step < keep_below`.
    pub fn resume(path: &Path, keep_below: u64) -> Result<Self> {
        let kept = if path.exists() {
            read_metrics(path)?
                .records
                .into_iter()
                .filter(|r| r.report.step < keep_below)
                .collect()
        } else {
            Vec::new()
        };
        let mut w = Self {
            file: std::fs::File::create(path).map_err(|e| Error::io(path, e))?,
            path: path.to_path_buf(),
        };
        for r in &kept {
            w.write(r)?;
        }
        Ok(w)
    }

    pub fn write(&mut self, record: &MetricsRecord) -> Result<()> {
        let mut line = serde_json::to_vec(record)?;
        line.push(b'\n');
        self.file.write_all(&line).map_err(|e| Error::io(&self.path, e))?;
        self.file.flush().map_err(|e| Error::io(&self.path, e))
    }
}

/// Parsed metrics file.
#[derive(Clone, Debug, Default)]
pub struct MetricsFile {
    pub records: Vec<MetricsRecord>,
    /// Non-empty lines that failed to parse.
    pub skipped: usize,
}

pub fn read_metrics(path: &Path) -> Result<MetricsFile> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = MetricsFile::default();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str(&line) {
            Ok(r) => out.records.push(r),
            Err(_) => out.skipped += 1,
        }
    }
    Ok(out)
}
