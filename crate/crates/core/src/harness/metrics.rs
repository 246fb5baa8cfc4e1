use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::Path;

use crate::error::Result;

pub const METRICS_HEADER: &str =
    "update,epoch,train_loss,valid_loss,valid_accuracy,lr,grad_norm,skipped,wall_seconds";

/// One evaluation record. Undefined fields are written as empty cells.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub update: u64,
    pub epoch: u64,
    /// Mean minibatch loss since the previous row.
    pub train_loss: Option<f64>,
    pub valid_loss: f64,
    pub valid_accuracy: Option<f64>,
    pub lr: f64,
    /// Global gradient norm of the latest update, before clipping.
    pub grad_norm: Option<f64>,
    /// Updates skipped so far because of non-finite gradients.
    pub skipped: u64,
    pub wall_seconds: Option<f64>,
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl MetricsRow {
    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.update,
            self.epoch,
            cell(self.train_loss),
            self.valid_loss,
            cell(self.valid_accuracy),
            self.lr,
            cell(self.grad_norm),
            self.skipped,
            cell(self.wall_seconds)
        )
    }
}

/// Append-only CSV writer; every row is flushed as one complete line.
pub struct MetricsWriter {
    file: File,
}

impl MetricsWriter {
    pub fn create(path: &Path) -> Result<Self> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        let mut file = OpenOptions::new().write(true).create(true).truncate(true).open(path)?;
        file.write_all(format!("{METRICS_HEADER}\n").as_bytes())?;
        file.flush()?;
        Ok(MetricsWriter { file })
    }

    pub fn write(&mut self, row: &MetricsRow) -> Result<()> {
        self.file.write_all(format!("{}\n", row.to_csv()).as_bytes())?;
        self.file.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rows_round_trip_floats() {
        let row = MetricsRow {
            update: 7,
            epoch: 0,
            train_loss: Some(0.1 + 0.2),
            valid_loss: 1.0 / 3.0,
            valid_accuracy: None,
            lr: 1e-3,
            grad_norm: None,
            skipped: 0,
            wall_seconds: None,
        };
        let line = row.to_csv();
        let cells: Vec<&str> = line.split(',').collect();
        assert_eq!(cells.len(), METRICS_HEADER.split(',').count());
        assert_eq!(cells[2].parse::<f64>().unwrap(), 0.1 + 0.2);
        assert_eq!(cells[3].parse::<f64>().unwrap(), 1.0 / 3.0);
        assert_eq!(cells[4], "");
    }

    #[test]
    fn writer_emits_header_and_lines() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sub/m.csv");
        let mut w = MetricsWriter::create(&path).unwrap();
        let row = MetricsRow {
            update: 0,
            epoch: 0,
            train_loss: None,
            valid_loss: 2.0,
            valid_accuracy: Some(0.5),
            lr: 0.1,
            grad_norm: None,
            skipped: 0,
            wall_seconds: None,
        };
        w.write(&row).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text, format!("{METRICS_HEADER}\n0,0,,2,0.5,0.1,,0,\n"));
    }
}
