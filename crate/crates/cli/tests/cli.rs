use std::path::PathBuf;
use std::process::{Command, Output};

fn workspace() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn compsel(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_compsel")).current_dir(workspace()).args(args).output().expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

#[test]
fn verify_passes_on_fixtures() {
    let out = compsel(&["verify"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(!String::from_utf8_lossy(&out.stderr).contains("FAIL"));
}

#[test]
fn ann_budget_default_plan() {
    let out = compsel(&["ann-budget"]);
    assert_eq!(out.status.code(), Some(0));
    let text = stdout(&out);
    let row = text.lines().nth(1).expect("data row");
    assert!(row.starts_with("58,3,"), "{row}");
}

#[test]
fn pca_of_a_line_has_no_residual_past_one_axis() {
    let out = compsel(&["pca", "--points", "fixtures/line.csv"]);
    assert_eq!(out.status.code(), Some(0));
    let text = stdout(&out);
    let mut rows = 0;
    for line in text.lines().skip(1) {
        let cols: Vec<&str> = line.split(',').collect();
        let l: usize = cols[0].parse().unwrap();
        let residual: f64 = cols[cols.len() - 1].parse().unwrap();
        if l >= 1 {
            assert!(residual.abs() < 1e-12, "{line}");
        }
        rows += 1;
    }
    assert_eq!(rows, 4);
}

#[test]
fn unknown_subcommand_is_a_usage_error() {
    assert_eq!(compsel(&["frobnicate"]).status.code(), Some(2));
}

#[test]
fn missing_config_is_a_usage_error() {
    assert_eq!(compsel(&["bench", "--config", "fixtures/nope.json"]).status.code(), Some(2));
}

#[test]
fn bench_is_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for dir in [&a, &b] {
        let out = compsel(&["bench", "--config", "fixtures/bench_small.json", "--out", dir.path().to_str().unwrap()]);
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let mut names: Vec<_> = std::fs::read_dir(a.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert!(!names.is_empty());
    for name in names {
        let left = std::fs::read(a.path().join(&name)).unwrap();
        let right = std::fs::read(b.path().join(&name)).unwrap();
        assert_eq!(left, right, "{name:?} differs");
    }
}

#[test]
fn select_reports_one_row_per_family() {
    let out = compsel(&["select", "--config", "fixtures/select.json"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let text = stdout(&out);
    let mut lines = text.lines();
    assert!(lines.next().unwrap().starts_with("family,chosen_model"));
    assert_eq!(lines.count(), 2);
}

#[test]
fn select_seed_flag_changes_noise() {
    let a = stdout(&compsel(&["select", "--config", "fixtures/select.json", "--seed", "1"]));
    let b = stdout(&compsel(&["select", "--config", "fixtures/select.json", "--seed", "2"]));
    assert_ne!(a, b);
}
