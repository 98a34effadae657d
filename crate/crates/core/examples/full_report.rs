//! End to end: write a CSV, load it back with a JSON config, run all three
//! components and render report.json, CSV tables, plot data and SVGs.
//!
//!     cargo run --example full_report -- /tmp/fairaudit-report

use std::path::PathBuf;

use fairaudit::audit::run_audit;
use fairaudit::config::AuditConfig;
use fairaudit::error::AuditError;
use fairaudit::ingest::load_csv;
use fairaudit::report::{render_report, RenderOptions};
use fairaudit::synth::{generate_synthetic, write_csv, SynthSpec};

const CONFIG: &str = r#"{
  "columns": {"outcome": "y", "protected": ["race", "gender"], "treatment": "d"},
  "components": [1, 2, 3],
  "threshold": {"mode": "youden"},
  "mode": "dr",
  "n_permutations": 200,
  "n_bootstrap": 100,
  "seed": 11
}"#;

fn main() -> fairaudit::error::Result<()> {
    let out: PathBuf = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("fairaudit-report"));
    std::fs::create_dir_all(&out).map_err(|e| AuditError::io(&out, e))?;

    let csv = out.join("data.csv");
    let data = generate_synthetic(&SynthSpec {
        n: 5000,
        group_bias: vec![1.0, 0.0, 0.0, -0.5],
        treatment_rate: Some(0.3),
        seed: 11,
        ..SynthSpec::default()
    })?;
    write_csv(&data, std::fs::File::create(&csv).map_err(|e| AuditError::io(&csv, e))?)?;

    let config = AuditConfig::from_json(CONFIG)?;
    let loaded = load_csv(&csv, &config.columns)?;
    let report = run_audit(&config, &loaded)?;
    let written = render_report(&report, &out, RenderOptions { svg: true })?;

    if let Some(o) = &report.observational {
        println!("observational: accuracy {:.3}, AUROC {:.3}", o.accuracy, o.auroc.unwrap_or(f64::NAN));
    }
    for (name, u) in [
        ("treatment", report.treatment.as_ref().and_then(|s| s.max_statistic_u)),
        ("group intervention", report.general.as_ref().and_then(|s| s.max_statistic_u)),
    ] {
        println!("{name}: max-statistic u {:.4}", u.unwrap_or(0.0));
    }
    println!("{} files under {}", written.len(), out.display());
    Ok(())
}
