use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn hgda(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hgda"))
        .args(args)
        .current_dir(dir)
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

/// Two blobs per domain; the target swaps the axes.
fn write_domains(dir: &Path, scale: f64) {
    let mut s = String::new();
    let mut t = String::new();
    let mut l = String::new();
    for i in 0..16 {
        let c = i % 2;
        let x = if c == 0 { 2.0 } else { -2.0 } + 0.05 * i as f64;
        let y = 0.1 * ((i * 7) % 5) as f64;
        s += &format!("{},{}\n", x * scale, y * scale);
        t += &format!("{},{}\n", y * scale, x * scale);
        l += &format!("{}\n", c + 1);
    }
    fs::write(dir.join("s.csv"), s).unwrap();
    fs::write(dir.join("t.csv"), t).unwrap();
    fs::write(dir.join("s.labels"), &l).unwrap();
    fs::write(dir.join("t.labels"), &l).unwrap();
}

#[test]
fn adapt_writes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    write_domains(dir.path(), 1.0);
    let o = hgda(
        &[
            "adapt", "--source-features", "s.csv", "--source-labels", "s.labels",
            "--target-features", "t.csv", "--eta", "0.5", "--nt-outer", "2", "--seed", "3",
            "--out", "out",
        ],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let adapted = fs::read_to_string(dir.path().join("out/adapted.csv")).unwrap();
    assert_eq!(adapted.lines().count(), 16);
    assert!(dir.path().join("out/matching.csv").exists());
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("out/report.json")).unwrap()).unwrap();
    assert_eq!(report["rounds"].as_array().unwrap().len(), 2);
    assert_eq!(report["config"]["eta"], 0.5);
}

#[test]
fn evaluate_reports_accuracy() {
    let dir = tempfile::tempdir().unwrap();
    write_domains(dir.path(), 1.0);
    let o = hgda(
        &[
            "evaluate", "--train-features", "s.csv", "--train-labels", "s.labels",
            "--test-features", "s.csv", "--test-labels", "s.labels", "--out", "p.csv",
        ],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(stdout(&o).trim(), "accuracy 1.000000");
    let preds = fs::read_to_string(dir.path().join("p.csv")).unwrap();
    assert_eq!(preds, fs::read_to_string(dir.path().join("s.labels")).unwrap());
}

#[test]
fn input_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    write_domains(dir.path(), 1.0);
    fs::write(dir.path().join("ragged.csv"), "1,2\n3\n").unwrap();
    let missing = hgda(
        &["adapt", "--source-features", "nope.csv", "--source-labels", "s.labels", "--target-features", "t.csv", "--out", "o"],
        dir.path(),
    );
    assert_eq!(missing.status.code(), Some(1));
    let ragged = hgda(
        &["evaluate", "--train-features", "ragged.csv", "--train-labels", "s.labels", "--test-features", "t.csv"],
        dir.path(),
    );
    assert_eq!(ragged.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&ragged.stderr).contains("line 2"));
    let bad_eta = hgda(
        &["adapt", "--source-features", "s.csv", "--source-labels", "s.labels", "--target-features", "t.csv", "--eta", "1.5", "--out", "o"],
        dir.path(),
    );
    assert_eq!(bad_eta.status.code(), Some(1));
    assert_eq!(hgda(&["adapt"], dir.path()).status.code(), Some(1));
    assert_eq!(hgda(&["frobnicate"], dir.path()).status.code(), Some(1));
}

#[test]
fn overflow_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    write_domains(dir.path(), 1e300);
    let o = hgda(
        &["adapt", "--source-features", "s.csv", "--source-labels", "s.labels", "--target-features", "t.csv", "--out", "o"],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn lp_check_prints_deviation() {
    let dir = tempfile::tempdir().unwrap();
    let o = hgda(&["lp-check", "--n", "3", "--trials", "5", "--seed", "1"], dir.path());
    assert_eq!(o.status.code(), Some(0));
    let out = stdout(&o);
    let value: f64 = out.split_whitespace().nth(2).unwrap().parse().unwrap();
    assert!((0.0..0.1).contains(&value), "{out}");
    assert_eq!(hgda(&["lp-check", "--n", "9"], dir.path()).status.code(), Some(1));
}

#[test]
fn benchmark_isolates_failures() {
    let dir = tempfile::tempdir().unwrap();
    write_domains(dir.path(), 1.0);
    let spec = r#"
trials = 2
source_quota = 5

[adaptation]
nt_outer = 1

[adaptation.tensor]
triangles_per_node = 5
neighbors = 10

[[task]]
name = "S->T"
source_features = "s.csv"
source_labels = "s.labels"
target_features = "t.csv"
target_labels = "t.labels"

[[task]]
name = "S->missing"
source_features = "s.csv"
source_labels = "s.labels"
target_features = "missing.csv"
target_labels = "t.labels"
"#;
    fs::write(dir.path().join("bench.toml"), spec).unwrap();
    let o = hgda(&["benchmark", "--spec", "bench.toml"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = stdout(&o);
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 3);
    assert!(lines[0].starts_with("task,status,"));
    assert!(lines[1].starts_with("S->T,ok,"));
    assert!(lines[2].starts_with("S->missing,error,"));
}
