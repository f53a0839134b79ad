//! Run records and their CSV / JSON-lines serialization.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;

/// CSV header, in column order.
pub const CSV_COLUMNS: [&str; 11] = [
    "run_id",
    "swept_param",
    "swept_value",
    "mantissa_bits",
    "rounding",
    "granularity",
    "seed",
    "epoch",
    "test_accuracy",
    "epochs_to_90",
    "status",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Completed,
    Diverged,
}

impl Status {
    pub fn as_str(self) -> &'static str {
        match self {
            Status::Completed => "completed",
            Status::Diverged => "diverged",
        }
    }
}

/// One training run: its full configuration and accuracy curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: String,
    pub swept_param: String,
    pub swept_value: String,
    pub config: ExperimentConfig,
    /// Test accuracy after each epoch.
    pub accuracies: Vec<f64>,
    pub epochs_to_threshold: Option<usize>,
    pub wall_seconds: f64,
    pub status: Status,
}

/// First 1-based epoch whose accuracy reaches `threshold`.
///
/// ```
/// use lowprec_cli::record::epochs_to_threshold;
/// assert_eq!(epochs_to_threshold(&[0.3, 0.92, 0.95], 0.9), Some(2));
/// assert_eq!(epochs_to_threshold(&[0.3, 0.5], 0.9), None);
/// ```
pub fn epochs_to_threshold(accuracies: &[f64], threshold: f64) -> Option<usize> {
    accuracies.iter().position(|&a| a >= threshold).map(|i| i + 1)
}

/// The CSV view of a record: final epoch and accuracy only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvRow {
    pub run_id: String,
    pub swept_param: String,
    pub swept_value: String,
    pub mantissa_bits: u32,
    pub rounding: String,
    pub granularity: String,
    pub seed: u64,
    pub epoch: usize,
    pub test_accuracy: f64,
    pub epochs_to_90: Option<usize>,
    pub status: String,
}

impl From<&RunRecord> for CsvRow {
    fn from(r: &RunRecord) -> Self {
        CsvRow {
            run_id: r.run_id.clone(),
            swept_param: r.swept_param.clone(),
            swept_value: r.swept_value.clone(),
            mantissa_bits: r.config.mantissa_bits,
            rounding: r.config.rounding.to_string(),
            granularity: r.config.granularity.to_string(),
            seed: r.config.seed,
            epoch: r.accuracies.len(),
            test_accuracy: r.accuracies.last().copied().unwrap_or(0.0),
            epochs_to_90: r.epochs_to_threshold,
            status: r.status.as_str().to_string(),
        }
    }
}

pub fn write_csv<W: Write>(out: W, rows: &[CsvRow]) -> csv::Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(CSV_COLUMNS)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv<R: Read>(input: R) -> csv::Result<Vec<CsvRow>> {
    csv::Reader::from_reader(input).deserialize().collect()
}

pub fn write_jsonl<W: Write>(mut out: W, records: &[RunRecord]) -> std::io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

/// Reads JSON lines, skipping any that fail to parse (e.g. a torn final
/// line after an interrupted run).
pub fn read_jsonl(text: &str) -> Vec<RunRecord> {
    text.lines().filter_map(|l| serde_json::from_str(l).ok()).collect()
}
