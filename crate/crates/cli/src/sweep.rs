//! One-parameter-at-a-time sweeps with resumable CSV output.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use lowprec::network::{self, RunStatus};
use lowprec::{Dataset, MantissaBits, Network, NetworkSpec};
use thiserror::Error;

use crate::config::{ConfigError, ExperimentConfig};
use crate::record::{self, epochs_to_threshold, CsvRow, RunRecord, Status};

#[derive(Debug, Error)]
pub enum SweepError {
    #[error("sweep has no values")]
    NoValues,
    #[error("sweep has no seeds")]
    NoSeeds,
    #[error("a bitsize sweep takes its values from the bitsize list; drop one of the two")]
    BitsTwice,
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error(transparent)]
    Network(#[from] network::NetworkError),
}

/// The training parameter a sweep varies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, clap::ValueEnum)]
pub enum SweepParam {
    Bitsize,
    Rounding,
    DenseLayers,
    DenseUnits,
    BatchSize,
    InitPerturbation,
}

impl SweepParam {
    pub fn name(self) -> &'static str {
        match self {
            SweepParam::Bitsize => "bitsize",
            SweepParam::Rounding => "rounding",
            SweepParam::DenseLayers => "dense-layers",
            SweepParam::DenseUnits => "dense-units",
            SweepParam::BatchSize => "batch-size",
            SweepParam::InitPerturbation => "init-perturbation",
        }
    }

    /// Writes `value` into the matching config field.
    pub fn apply(self, cfg: &mut ExperimentConfig, value: &str) -> Result<(), ConfigError> {
        match self {
            SweepParam::Bitsize => {
                let total: u32 = value.trim().parse().map_err(|e: std::num::ParseIntError| ConfigError::BadValue {
                    key: "bitsize".into(),
                    value: value.into(),
                    reason: e.to_string(),
                })?;
                let bits = MantissaBits::from_bitsize(total).map_err(|e| ConfigError::BadValue {
                    key: "bitsize".into(),
                    value: value.into(),
                    reason: e.to_string(),
                })?;
                cfg.mantissa_bits = bits.get();
                Ok(())
            }
            other => cfg.set(other.name(), value),
        }
    }
}

impl fmt::Display for SweepParam {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SweepParam {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        <Self as clap::ValueEnum>::from_str(s, true)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub param: SweepParam,
    /// Values of the swept parameter, in text form. A bitsize sweep takes
    /// total bit counts (9..=32).
    pub values: Vec<String>,
    /// Mantissa widths crossed with every value. Empty keeps the base width.
    pub mantissa_bits: Vec<u32>,
    pub seeds: Vec<u64>,
    /// Everything not swept.
    pub base: ExperimentConfig,
}

/// One (value, width, seed) cell of a sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub run_id: String,
    pub value: String,
    pub config: ExperimentConfig,
}

impl SweepSpec {
    /// Expands the grid in canonical order: value, then width, then seed.
    pub fn cells(&self) -> Result<Vec<Cell>, SweepError> {
        if self.values.is_empty() {
            return Err(SweepError::NoValues);
        }
        if self.seeds.is_empty() {
            return Err(SweepError::NoSeeds);
        }
        if self.param == SweepParam::Bitsize && !self.mantissa_bits.is_empty() {
            return Err(SweepError::BitsTwice);
        }
        let widths: Vec<Option<u32>> = if self.mantissa_bits.is_empty() {
            vec![None]
        } else {
            self.mantissa_bits.iter().copied().map(Some).collect()
        };
        let mut cells = Vec::new();
        for value in &self.values {
            for &width in &widths {
                for &seed in &self.seeds {
                    let mut config = self.base.clone();
                    config.seed = seed;
                    if let Some(m) = width {
                        config.mantissa_bits = m;
                    }
                    self.param.apply(&mut config, value)?;
                    config.precision()?;
                    let run_id = format!("{}={}/m{}/s{}", self.param, value.trim(), config.mantissa_bits, seed);
                    cells.push(Cell { run_id, value: value.trim().to_string(), config });
                }
            }
        }
        Ok(cells)
    }
}

/// Trains one cell. Input shape and class count come from `train`.
/// Divergence is a result, not an error.
pub fn run_cell(cell: &Cell, param: SweepParam, train: &Dataset, test: &Dataset) -> Result<RunRecord, SweepError> {
    let cfg = &cell.config;
    let (h, w) = train.image_hw();
    let spec = NetworkSpec { input: (1, h, w), classes: train.classes(), ..cfg.network_spec()? };
    let net = Network::new(spec)?;
    let train_cfg = cfg.train_config()?;
    let train = train.subset(cfg.subset);
    let test = test.subset(cfg.test_subset);
    let start = Instant::now();
    let outcome = network::train(&net, &train_cfg, &train, &test)?;
    let status = match outcome.status {
        RunStatus::Diverged { .. } => Status::Diverged,
        _ => Status::Completed,
    };
    Ok(RunRecord {
        run_id: cell.run_id.clone(),
        swept_param: param.to_string(),
        swept_value: cell.value.clone(),
        config: cfg.clone(),
        epochs_to_threshold: epochs_to_threshold(&outcome.accuracies, cfg.threshold),
        accuracies: outcome.accuracies,
        wall_seconds: start.elapsed().as_secs_f64(),
        status,
    })
}

/// Path of the JSON-lines file holding full records next to `csv_path`.
pub fn sidecar_path(csv_path: &Path) -> PathBuf {
    let mut name = csv_path.file_name().unwrap_or_default().to_os_string();
    name.push(".runs.jsonl");
    csv_path.with_file_name(name)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSummary {
    pub rows: Vec<CsvRow>,
    /// Cells found complete in an earlier run's output.
    pub reused: usize,
    pub computed: usize,
}

/// Runs every cell of `spec` not already present in `out_path`.
///
/// Rows are appended as cells finish, so an interrupted sweep loses at most
/// the cell in progress; the file is rewritten in canonical cell order at
/// the end. Full records (config, per-epoch curve, wall time) go to
/// [`sidecar_path`].
pub fn run_sweep(
    spec: &SweepSpec,
    train: &Dataset,
    test: &Dataset,
    out_path: &Path,
    mut on_done: impl FnMut(&RunRecord),
) -> Result<SweepSummary, SweepError> {
    let cells = spec.cells()?;
    let jsonl_path = sidecar_path(out_path);
    let order: HashMap<&str, usize> = cells.iter().enumerate().map(|(i, c)| (c.run_id.as_str(), i)).collect();

    let mut rows: Vec<CsvRow> = match fs::File::open(out_path) {
        Ok(f) => record::read_csv(f).map_err(|source| SweepError::Csv { path: out_path.into(), source })?,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Vec::new(),
        Err(source) => return Err(SweepError::Io { path: out_path.into(), source }),
    };
    rows.retain(|r| order.contains_key(r.run_id.as_str()));
    let mut seen = HashSet::new();
    rows.retain(|r| seen.insert(r.run_id.clone()));
    let mut records: Vec<RunRecord> = match fs::read_to_string(&jsonl_path) {
        Ok(text) => record::read_jsonl(&text),
        Err(_) => Vec::new(),
    };
    records.retain(|r| rows.iter().any(|row| row.run_id == r.run_id));
    let reused = rows.len();

    rewrite(out_path, &jsonl_path, &rows, &records)?;
    let mut csv_out = append_csv(out_path)?;
    let mut json_out = open_append(&jsonl_path)?;

    let mut computed = 0;
    for cell in &cells {
        if rows.iter().any(|r| r.run_id == cell.run_id) {
            continue;
        }
        let rec = run_cell(cell, spec.param, train, test)?;
        let row = CsvRow::from(&rec);
        csv_out.serialize(&row).and_then(|_| Ok(csv_out.flush()?)).map_err(|source| SweepError::Csv {
            path: out_path.into(),
            source,
        })?;
        record::write_jsonl(&mut json_out, std::slice::from_ref(&rec))
            .map_err(|source| SweepError::Io { path: jsonl_path.clone(), source })?;
        on_done(&rec);
        rows.push(row);
        records.push(rec);
        computed += 1;
    }
    drop(csv_out);
    drop(json_out);

    rows.sort_by_key(|r| order[r.run_id.as_str()]);
    records.sort_by_key(|r| order[r.run_id.as_str()]);
    rewrite(out_path, &jsonl_path, &rows, &records)?;
    Ok(SweepSummary { rows, reused, computed })
}

fn rewrite(csv_path: &Path, jsonl_path: &Path, rows: &[CsvRow], records: &[RunRecord]) -> Result<(), SweepError> {
    if let Some(dir) = csv_path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|source| SweepError::Io { path: dir.into(), source })?;
    }
    let tmp = csv_path.with_extension("csv.tmp");
    let file = fs::File::create(&tmp).map_err(|source| SweepError::Io { path: tmp.clone(), source })?;
    record::write_csv(BufWriter::new(file), rows).map_err(|source| SweepError::Csv { path: tmp.clone(), source })?;
    fs::rename(&tmp, csv_path).map_err(|source| SweepError::Io { path: csv_path.into(), source })?;

    let file = fs::File::create(jsonl_path).map_err(|source| SweepError::Io { path: jsonl_path.into(), source })?;
    record::write_jsonl(BufWriter::new(file), records).map_err(|source| SweepError::Io { path: jsonl_path.into(), source })
}

fn open_append(path: &Path) -> Result<fs::File, SweepError> {
    fs::OpenOptions::new().append(true).open(path).map_err(|source| SweepError::Io { path: path.into(), source })
}

fn append_csv(path: &Path) -> Result<csv::Writer<fs::File>, SweepError> {
    Ok(csv::WriterBuilder::new().has_headers(false).from_writer(open_append(path)?))
}
