use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct LogRecord {
    pub epoch: usize,
    pub step: usize,
    pub values: Vec<f64>,
}

/// Per-iteration training metrics with named columns.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainLog {
    pub columns: Vec<String>,
    pub records: Vec<LogRecord>,
}

impl TrainLog {
    pub fn new(columns: &[&str]) -> Self {
        TrainLog { columns: columns.iter().map(|c| c.to_string()).collect(), records: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Appends a record; values must be finite and `(epoch, step)` must
    /// strictly increase.
    pub fn push(&mut self, epoch: usize, step: usize, values: Vec<f64>) -> Result<()> {
        if values.len() != self.columns.len() {
            return Err(Error::invalid(format!("{} values for {} log columns", values.len(), self.columns.len())));
        }
        if let Some((i, v)) = values.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::NonFinite(format!("{} = {v} at epoch {epoch}, step {step}", self.columns[i])));
        }
        if let Some(last) = self.records.last() {
            if (epoch, step) <= (last.epoch, last.step) {
                return Err(Error::invalid(format!(
                    "log position ({epoch}, {step}) does not follow ({}, {})",
                    last.epoch, last.step
                )));
            }
        }
        self.records.push(LogRecord { epoch, step, values });
        Ok(())
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let i = self.columns.iter().position(|c| c == name)?;
        Some(self.records.iter().map(|r| r.values[i]).collect())
    }

    /// Appends every record of `other`, which must share the columns.
    pub fn extend(&mut self, other: TrainLog) -> Result<()> {
        if other.columns != self.columns {
            return Err(Error::invalid("log columns differ"));
        }
        for r in other.records {
            self.push(r.epoch, r.step, r.values)?;
        }
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,step");
        for c in &self.columns {
            s.push(',');
            s.push_str(c);
        }
        s.push('\n');
        for r in &self.records {
            write!(s, "{},{}", r.epoch, r.step).expect("writing to a String");
            for v in &r.values {
                write!(s, ",{v:.6}").expect("writing to a String");
            }
            s.push('\n');
        }
        s
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }
}

/// Trailing moving average with the given window; empty if `xs` is shorter.
pub fn moving_average(xs: &[f64], window: usize) -> Vec<f64> {
    if window == 0 || xs.len() < window {
        return Vec::new();
    }
    xs.windows(window).map(|w| w.iter().sum::<f64>() / window as f64).collect()
}
