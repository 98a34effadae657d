use std::path::{Path, PathBuf};
use std::process::Command;

use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_fairaudit"))
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn synth_csv(dir: &Path) -> PathBuf {
    let out = dir.join("data.csv");
    let status = bin()
        .args(["synth", "--n", "600", "--seed", "4", "--treatment-rate", "0.4", "--out"])
        .arg(&out)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    out
}

const CONFIG: &str = r#"{
  "columns": {"outcome": "y", "protected": ["race", "gender"], "treatment": "d"},
  "n_permutations": 10,
  "n_bootstrap": 0
}"#;

fn audit(config: &Path, data: &Path, out: &Path, extra: &[&str]) -> i32 {
    bin()
        .arg("audit")
        .arg("--config")
        .arg(config)
        .arg("--data")
        .arg(data)
        .arg("--out")
        .arg(out)
        .args(extra)
        .output()
        .unwrap()
        .status
        .code()
        .unwrap()
}

#[test]
fn successful_audit_exits_zero_and_writes_outputs() {
    let dir = TempDir::new().unwrap();
    let data = synth_csv(dir.path());
    let config = write(dir.path(), "c.json", CONFIG);
    let out = dir.path().join("out");
    assert_eq!(audit(&config, &data, &out, &["--emit-svg", "--mode", "dr", "--threshold", "youden"]), 0);
    assert!(out.join("report.json").is_file());
    assert!(out.join("tables/general_u_values.csv").is_file());
    assert!(out.join("plots/general__cfpr.maximum.json").is_file());
    assert!(out.join("plots/general__cfpr.maximum.svg").is_file());
}

#[test]
fn validate_exits_zero() {
    let dir = TempDir::new().unwrap();
    let data = synth_csv(dir.path());
    let config = write(dir.path(), "c.json", CONFIG);
    let o = bin().arg("validate").arg("--config").arg(&config).arg("--data").arg(&data).output().unwrap();
    assert_eq!(o.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&o.stdout).contains("\"n_rows\": 600"));
}

#[test]
fn configuration_errors_exit_two() {
    let dir = TempDir::new().unwrap();
    let data = synth_csv(dir.path());
    let out = dir.path().join("out");
    let unknown = write(dir.path(), "u.json", r#"{"columns": {"outcome": "y", "protected": ["race"]}, "bogus": 1}"#);
    assert_eq!(audit(&unknown, &data, &out, &[]), 2);
    let no_treatment = write(
        dir.path(),
        "t.json",
        r#"{"columns": {"outcome": "y", "protected": ["race", "gender"]}, "components": [2]}"#,
    );
    assert_eq!(audit(&no_treatment, &data, &out, &[]), 2);
    let missing_col = write(dir.path(), "m.json", r#"{"columns": {"outcome": "label", "protected": ["race"]}}"#);
    assert_eq!(audit(&missing_col, &data, &out, &["--components", "1"]), 2);
    let config = write(dir.path(), "c.json", CONFIG);
    assert_eq!(audit(&config, &data, &out, &["--permutations", "0"]), 2);
    assert_eq!(audit(&config, &data, &out, &["--threshold", "high"]), 2);
    assert_eq!(audit(&config, &data, &out, &["--components", "1,5"]), 2);
}

#[test]
fn bad_data_exits_three() {
    let dir = TempDir::new().unwrap();
    let config = write(dir.path(), "c.json", r#"{"columns": {"outcome": "y", "protected": ["race"]}, "components": [1]}"#);
    let out = dir.path().join("out");
    let mut text = String::from("x,race,y\n");
    for i in 1..=10 {
        text.push_str(&format!("{i},{},{}\n", if i % 2 == 0 { "A" } else { "B" }, if i == 7 { 2 } else { i % 2 }));
    }
    let data = write(dir.path(), "bad.csv", &text);
    let o = bin()
        .args(["audit", "--config"])
        .arg(&config)
        .arg("--data")
        .arg(&data)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("row 7"));
    let sep = write(dir.path(), "sep.csv", "x,race,y\n1,A | B,0\n2,C,1\n");
    assert_eq!(audit(&config, &sep, &out, &[]), 3);
}

#[test]
fn separable_data_exits_four() {
    let dir = TempDir::new().unwrap();
    let config = write(
        dir.path(),
        "c.json",
        r#"{"columns": {"outcome": "y", "protected": ["g"]}, "components": [1], "min_group_n": 1, "model": {"l2": 0}}"#,
    );
    let mut text = String::from("x,g,y\n");
    for i in 0..80 {
        let x = f64::from(i) - 39.5;
        text.push_str(&format!("{x},{},{}\n", if i % 2 == 0 { "A" } else { "B" }, u8::from(x > 0.0)));
    }
    let data = write(dir.path(), "sep.csv", &text);
    assert_eq!(audit(&config, &data, &dir.path().join("out"), &[]), 4);
}

#[test]
fn unwritable_output_exits_one() {
    let dir = TempDir::new().unwrap();
    let data = synth_csv(dir.path());
    let config = write(dir.path(), "c.json", CONFIG);
    let blocker = write(dir.path(), "file", "not a directory");
    assert_eq!(audit(&config, &data, &blocker.join("out"), &["--components", "1"]), 1);
}

#[test]
fn synth_is_deterministic() {
    let dir = TempDir::new().unwrap();
    let run = |name: &str| {
        let out = dir.path().join(name);
        let status = bin()
            .args(["synth", "--n", "200", "--seed", "9", "--bias", "-1,0,0.5,0", "--score-noise", "0.3", "--out"])
            .arg(&out)
            .status()
            .unwrap();
        assert_eq!(status.code(), Some(0));
        std::fs::read(out).unwrap()
    };
    assert_eq!(run("a.csv"), run("b.csv"));
}
