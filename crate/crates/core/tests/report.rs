use std::collections::BTreeSet;
use std::process::Command;

use tempfile::TempDir;

use fairaudit::audit::run_audit;
use fairaudit::config::AuditConfig;
use fairaudit::report::{parse_report, render_report, to_canonical_json, RenderOptions};
use fairaudit::synth::{generate_synthetic, SynthSpec};

fn config() -> AuditConfig {
    let mut c = AuditConfig::new("y", vec!["race".into(), "gender".into()]);
    c.columns.treatment = Some("d".into());
    c.components = BTreeSet::from([1, 2, 3]);
    c.n_permutations = 30;
    c.n_bootstrap = 10;
    c.seed = 17;
    c
}

fn data() -> fairaudit::data::Dataset {
    generate_synthetic(&SynthSpec {
        n: 1200,
        group_bias: vec![1.0, 0.0, 0.0, 0.0],
        treatment_rate: Some(0.3),
        seed: 2,
        ..SynthSpec::default()
    })
    .unwrap()
}

#[test]
fn rendered_json_parses_back_to_the_report() {
    let report = run_audit(&config(), &data()).unwrap();
    let dir = TempDir::new().unwrap();
    render_report(&report, dir.path(), RenderOptions::default()).unwrap();
    let text = std::fs::read_to_string(dir.path().join("report.json")).unwrap();
    assert_eq!(parse_report(&text).unwrap(), report);
    assert_eq!(to_canonical_json(&report).unwrap(), text);
    assert!(!text.contains("NaN") && !text.contains("inf"));
}

#[test]
fn histograms_sum_to_permutation_count() {
    let report = run_audit(&config(), &data()).unwrap();
    for section in [&report.treatment.as_ref().unwrap().null, &report.general.as_ref().unwrap().null] {
        assert!(!section.is_empty());
        for s in section.iter() {
            assert_eq!(s.bins.iter().map(|b| b.count).sum::<usize>(), 30, "{}", s.statistic);
        }
    }
}

#[test]
fn echoed_config_reproduces_the_report() {
    let report = run_audit(&config(), &data()).unwrap();
    let echoed = report.provenance.config.clone();
    let again = run_audit(&echoed, &data()).unwrap();
    assert_eq!(to_canonical_json(&again).unwrap(), to_canonical_json(&report).unwrap());
}

#[test]
fn cli_output_is_identical_across_runs_and_worker_counts() {
    let dir = TempDir::new().unwrap();
    let csv = dir.path().join("d.csv");
    let mut f = std::fs::File::create(&csv).unwrap();
    fairaudit::synth::write_csv(&data(), &mut f).unwrap();
    let cfg = dir.path().join("c.json");
    std::fs::write(&cfg, serde_json::to_string(&config()).unwrap()).unwrap();
    let run = |name: &str, workers: &str| {
        let out = dir.path().join(name);
        let status = Command::new(env!("CARGO_BIN_EXE_fairaudit"))
            .args(["audit", "--workers", workers, "--config"])
            .arg(&cfg)
            .arg("--data")
            .arg(&csv)
            .arg("--out")
            .arg(&out)
            .status()
            .unwrap();
        assert_eq!(status.code(), Some(0));
        std::fs::read(out.join("report.json")).unwrap()
    };
    let a = run("a", "1");
    assert_eq!(a, run("b", "1"));
    assert_eq!(a, run("c", "4"));
    assert!(!String::from_utf8_lossy(&a).contains("workers"));
}
