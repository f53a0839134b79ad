//! The binary's argument handling and reports, without training data.

use std::process::Command;

fn lowprec() -> Command {
    Command::new(env!("CARGO_BIN_EXE_lowprec"))
}

#[test]
fn prop1_report_has_fixed_header_and_ratios_near_one() {
    let out = lowprec().args(["--report", "prop1"]).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "n,eps,predicted,measured,ratio");
    let ratios: Vec<f64> = lines.map(|l| l.rsplit(',').next().unwrap().parse().unwrap()).collect();
    assert_eq!(ratios.len(), 9);
    assert!(ratios.iter().all(|r| (r - 1.0).abs() < 1e-3));
}

#[test]
fn prop1_layers_range_and_zero_eps() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("p.csv");
    let status = lowprec()
        .args(["--report", "prop1", "--layers", "1..4", "--eps", "0,1e-7", "--out"])
        .arg(&path)
        .status()
        .unwrap();
    assert!(status.success());
    let text = std::fs::read_to_string(path).unwrap();
    let rows: Vec<Vec<f64>> = text.lines().skip(1).map(|l| l.split(',').map(|f| f.parse().unwrap()).collect()).collect();
    assert_eq!(rows.len(), 8);
    let zero: Vec<&Vec<f64>> = rows.iter().filter(|r| r[1] == 0.0).collect();
    assert!(zero.iter().all(|r| r[2] == 0.0 && r[3] == 0.0 && r[4] == 0.0));
    let predicted: Vec<f64> = rows.iter().filter(|r| r[1] > 0.0).map(|r| r[2]).collect();
    assert!(predicted.windows(2).all(|w| w[1] > w[0]));
}

#[test]
fn backprop_report_residuals_are_tiny() {
    let out = lowprec().args(["--report", "backprop"]).output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let header: Vec<&str> = text.lines().next().unwrap().split(',').collect();
    let col = header.iter().position(|h| *h == "residual").unwrap();
    for line in text.lines().skip(1) {
        let r: f64 = line.split(',').nth(col).unwrap().parse().unwrap();
        assert!(r.abs() < 1e-12);
    }
}

#[test]
fn bad_flags_fail_cleanly() {
    let out = lowprec().args(["--granularity", "sometimes"]).output().unwrap();
    assert!(!out.status.success());
    let dir = tempfile::tempdir().unwrap();
    let out = lowprec().args(["--data-dir"]).arg(dir.path()).args(["--out"]).arg(dir.path().join("x.csv")).output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("loading training set"));
    let out = lowprec().args(["--sweep", "batch-size", "--values", ""]).output().unwrap();
    assert!(!out.status.success());
}
