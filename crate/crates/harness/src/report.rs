//! Training curves to a plot-ready summary.

use std::fs::File;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};
use crate::metrics::trailing_mean;

/// Epochs averaged into the smoothed training error.
pub const SMOOTHING_WINDOW: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub epoch: usize,
    pub training_error: f64,
    pub validation_error: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveSummary {
    pub epochs: usize,
    pub final_training_error: f64,
    pub final_validation_error: f64,
    /// Mean training error over the last [`SMOOTHING_WINDOW`] epochs.
    pub smoothed_training_error: f64,
    pub min_validation_error: f64,
    pub min_validation_epoch: usize,
    /// Final validation error over the smoothed training error.
    pub generalization_ratio: f64,
}

pub fn read_curves(path: impl AsRef<Path>) -> Result<Vec<CurveRow>> {
    let mut reader = csv::Reader::from_reader(File::open(path)?);
    Ok(reader.deserialize().collect::<std::result::Result<_, _>>()?)
}

pub fn summarize(rows: &[CurveRow]) -> Result<CurveSummary> {
    let last = rows.last().ok_or_else(|| HarnessError::Invalid("curves file has no epochs".into()))?;
    let train: Vec<f64> = rows.iter().map(|r| r.training_error).collect();
    let smoothed = *trailing_mean(&train, SMOOTHING_WINDOW).last().expect("non-empty");
    let best = rows
        .iter()
        .min_by(|a, b| a.validation_error.total_cmp(&b.validation_error))
        .expect("non-empty");
    Ok(CurveSummary {
        epochs: rows.len(),
        final_training_error: last.training_error,
        final_validation_error: last.validation_error,
        smoothed_training_error: smoothed,
        min_validation_error: best.validation_error,
        min_validation_epoch: best.epoch,
        generalization_ratio: last.validation_error / smoothed,
    })
}

/// Writes `summary.json` and `curves_smoothed.csv` into `out_dir`.
pub fn write_report(rows: &[CurveRow], out_dir: impl AsRef<Path>) -> Result<CurveSummary> {
    let out_dir = out_dir.as_ref();
    std::fs::create_dir_all(out_dir)?;
    let summary = summarize(rows)?;
    std::fs::write(out_dir.join("summary.json"), serde_json::to_string_pretty(&summary)? + "\n")?;
    let train: Vec<f64> = rows.iter().map(|r| r.training_error).collect();
    let smooth = trailing_mean(&train, SMOOTHING_WINDOW);
    let mut w = csv::Writer::from_path(out_dir.join("curves_smoothed.csv"))?;
    w.write_record(["epoch", "training_error", "training_smoothed", "validation_error", "lr"])?;
    for (r, s) in rows.iter().zip(smooth) {
        w.write_record([
            r.epoch.to_string(),
            r.training_error.to_string(),
            s.to_string(),
            r.validation_error.to_string(),
            r.lr.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;
    use speckle_net::train::{write_curves, EpochRecord};

    #[test]
    fn reads_what_training_writes() {
        let dir = tempfile::tempdir().unwrap();
        let records: Vec<EpochRecord> = (0..15)
            .map(|e| EpochRecord {
                epoch: e,
                training_error: 1.0 / (e + 1) as f64,
                validation_error: 2.0 / (e + 1) as f64 + if e == 12 { -1.0 } else { 0.0 },
                lr: 1e-3 * 0.85f64.powi(e as i32),
            })
            .collect();
        let path = dir.path().join("curves.csv");
        write_curves(File::create(&path).unwrap(), &records).unwrap();
        let rows = read_curves(&path).unwrap();
        assert_eq!(rows.len(), 15);
        assert_eq!(rows[3].lr, records[3].lr);
        let s = write_report(&rows, dir.path()).unwrap();
        let tail: f64 = (5..15).map(|e| 1.0 / (e + 1) as f64).sum::<f64>() / 10.0;
        assert!((s.smoothed_training_error - tail).abs() < 1e-15);
        assert_eq!(s.min_validation_epoch, 12);
        assert!(dir.path().join("curves_smoothed.csv").exists());
    }

    #[test]
    fn empty_curves_are_an_error() {
        assert!(summarize(&[]).is_err());
    }
}
