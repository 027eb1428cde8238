use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use crate::error::{Error, Result};

pub const CSV_HEADER: &str = "step,lr,train_l1,val_psnr";

#[derive(Clone, Debug, PartialEq)]
pub struct MetricRow {
    pub step: u64,
    pub lr: f64,
    pub train_l1: f64,
    pub val_psnr: Option<f64>,
}

impl MetricRow {
    pub fn to_csv(&self) -> String {
        let val = match self.val_psnr {
            None => String::new(),
            Some(v) if v.is_infinite() => "inf".into(),
            Some(v) => format!("{v}"),
        };
        format!("{},{},{},{}", self.step, self.lr, self.train_l1, val)
    }
}

/// Append-only metric destination, shareable across threads.
pub trait MetricSink: Send + Sync {
    fn record(&self, row: &MetricRow) -> Result<()>;
}

pub struct NullSink;

impl MetricSink for NullSink {
    fn record(&self, _: &MetricRow) -> Result<()> {
        Ok(())
    }
}

#[derive(Default)]
pub struct MemorySink {
    rows: Mutex<Vec<MetricRow>>,
}

impl MemorySink {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn rows(&self) -> Vec<MetricRow> {
        self.rows.lock().unwrap_or_else(|e| e.into_inner()).clone()
    }
}

impl MetricSink for MemorySink {
    fn record(&self, row: &MetricRow) -> Result<()> {
        self.rows
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .push(row.clone());
        Ok(())
    }
}

/// CSV file with columns `step,lr,train_l1,val_psnr`.
pub struct CsvSink {
    path: PathBuf,
    out: Mutex<BufWriter<File>>,
}

impl CsvSink {
    pub fn create(path: &Path) -> Result<Self> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        writeln!(out, "{CSV_HEADER}").map_err(|e| Error::io(path, e))?;
        Ok(Self {
            path: path.to_path_buf(),
            out: Mutex::new(out),
        })
    }

    pub fn flush(&self) -> Result<()> {
        let mut out = self.out.lock().unwrap_or_else(|e| e.into_inner());
        out.flush().map_err(|e| Error::io(&self.path, e))
    }
}

impl MetricSink for CsvSink {
    fn record(&self, row: &MetricRow) -> Result<()> {
        let mut out = self.out.lock().unwrap_or_else(|e| e.into_inner());
        writeln!(out, "{}", row.to_csv()).map_err(|e| Error::io(&self.path, e))?;
        if row.val_psnr.is_some() {
            out.flush().map_err(|e| Error::io(&self.path, e))?;
        }
        Ok(())
    }
}

impl<S: MetricSink + ?Sized> MetricSink for &S {
    fn record(&self, row: &MetricRow) -> Result<()> {
        (**self).record(row)
    }
}
