//! Sweeps on a synthetic task: row layout, resume and determinism.

#[path = "../../core/tests/common/synthetic.rs"]
mod synthetic;

use std::fs;

use lowprec::data::Split;
use lowprec_cli::record::{self, CSV_COLUMNS};
use lowprec_cli::sweep::{self, sidecar_path, SweepParam, SweepSpec};
use lowprec_cli::ExperimentConfig;

fn base() -> ExperimentConfig {
    ExperimentConfig {
        subset: 120,
        test_subset: 60,
        epochs: 2,
        batch_size: 16,
        learning_rate: 1e-2,
        init_scale: 0.3,
        conv: "3x3x3".into(),
        dense_units: 6,
        ..ExperimentConfig::default()
    }
}

fn spec(param: SweepParam, values: &[&str], bits: &[u32]) -> SweepSpec {
    SweepSpec {
        param,
        values: values.iter().map(|s| s.to_string()).collect(),
        mantissa_bits: bits.to_vec(),
        seeds: vec![1],
        base: base(),
    }
}

#[test]
fn dense_layer_sweep_writes_one_row_per_cell() {
    let (train, test) = (synthetic::bars(120, 1, Split::Train), synthetic::bars(60, 2, Split::Test));
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("dense.csv");
    let s = spec(SweepParam::DenseLayers, &["1", "2", "3", "4", "5"], &[7, 9]);
    let summary = sweep::run_sweep(&s, &train, &test, &out, |_| {}).unwrap();
    assert_eq!((summary.computed, summary.reused), (10, 0));

    let text = fs::read_to_string(&out).unwrap();
    assert_eq!(text.lines().next().unwrap(), CSV_COLUMNS.join(","));
    let rows = record::read_csv(text.as_bytes()).unwrap();
    assert_eq!(rows.len(), 10);
    assert!(rows.iter().all(|r| r.epoch == 2 && (0.0..=1.0).contains(&r.test_accuracy)));
    assert_eq!(rows[1].run_id, "dense-layers=1/m9/s1");
    for line in text.lines().skip(1) {
        let fields: Vec<&str> = line.split(',').collect();
        assert_eq!(fields.len(), CSV_COLUMNS.len());
        for i in [3, 6, 7, 8] {
            fields[i].parse::<f64>().unwrap();
        }
    }

    let sidecar = record::read_jsonl(&fs::read_to_string(sidecar_path(&out)).unwrap());
    assert_eq!(sidecar.len(), 10);
    assert_eq!(sidecar[4].config.dense_layers, 3);
    assert_eq!(sidecar[4].accuracies.len(), 2);
}

#[test]
fn empty_value_list_writes_nothing() {
    let (train, test) = (synthetic::bars(20, 1, Split::Train), synthetic::bars(10, 2, Split::Test));
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("none.csv");
    assert!(sweep::run_sweep(&spec(SweepParam::BatchSize, &[], &[]), &train, &test, &out, |_| {}).is_err());
    assert!(!out.exists());
}

#[test]
fn rerun_recomputes_only_missing_cells() {
    let (train, test) = (synthetic::bars(120, 1, Split::Train), synthetic::bars(60, 2, Split::Test));
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("bits.csv");
    let s = spec(SweepParam::Bitsize, &["12", "14", "32"], &[]);
    sweep::run_sweep(&s, &train, &test, &out, |_| {}).unwrap();
    let original = fs::read_to_string(&out).unwrap();

    let again = sweep::run_sweep(&s, &train, &test, &out, |_| {}).unwrap();
    assert_eq!((again.computed, again.reused), (0, 3));
    assert_eq!(fs::read_to_string(&out).unwrap(), original);

    let mut lines: Vec<&str> = original.lines().collect();
    lines.pop();
    fs::write(&out, lines.join("\n") + "\n").unwrap();
    let mut recomputed = Vec::new();
    let resumed = sweep::run_sweep(&s, &train, &test, &out, |r| recomputed.push(r.run_id.clone())).unwrap();
    assert_eq!(recomputed, vec!["bitsize=32/m23/s1".to_string()]);
    assert_eq!(resumed.reused, 2);
    assert_eq!(fs::read_to_string(&out).unwrap(), original);
    assert_eq!(record::read_jsonl(&fs::read_to_string(sidecar_path(&out)).unwrap()).len(), 3);
}

#[test]
fn rows_from_other_sweeps_are_dropped() {
    let (train, test) = (synthetic::bars(60, 1, Split::Train), synthetic::bars(30, 2, Split::Test));
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("mixed.csv");
    sweep::run_sweep(&spec(SweepParam::BatchSize, &["8"], &[]), &train, &test, &out, |_| {}).unwrap();
    let summary = sweep::run_sweep(&spec(SweepParam::BatchSize, &["16"], &[]), &train, &test, &out, |_| {}).unwrap();
    assert_eq!(summary.rows.len(), 1);
    assert_eq!(summary.rows[0].swept_value, "16");
}

#[test]
fn truncate_sweeps_are_byte_identical() {
    let (train, test) = (synthetic::bars(120, 1, Split::Train), synthetic::bars(60, 2, Split::Test));
    let dir = tempfile::tempdir().unwrap();
    let s = spec(SweepParam::Rounding, &["truncate"], &[3, 7]);
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    sweep::run_sweep(&s, &train, &test, &a, |_| {}).unwrap();
    sweep::run_sweep(&s, &train, &test, &b, |_| {}).unwrap();
    assert_eq!(fs::read(a).unwrap(), fs::read(b).unwrap());
}
