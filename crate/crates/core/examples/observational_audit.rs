//! Selection rates, TPR/FPR and their gaps per attribute and per
//! intersection, on a synthetic table with one disadvantaged subgroup.
//!
//!     cargo run --example observational_audit

use fairaudit::data::ProtectedSpec;
use fairaudit::observational::{run_component1, Cohort, ObservationalConfig};
use fairaudit::synth::{generate_synthetic, SynthSpec};

fn main() -> fairaudit::error::Result<()> {
    let data = generate_synthetic(&SynthSpec {
        n: 5000,
        group_bias: vec![0.0, 0.0, -1.0, 0.0],
        seed: 1,
        ..SynthSpec::default()
    })?;
    let mut cfg = ObservationalConfig::new(ProtectedSpec::new(["race", "gender"]));
    cfg.group_features = true;
    let report = run_component1(&data, &cfg)?;

    println!("accuracy {:.3}, AUROC {:.3}", report.accuracy, report.auroc.unwrap_or(f64::NAN));
    let inter = report.axis("intersectional", Cohort::Filtered).expect("two attributes");
    println!("{:<16} {:>5} {:>7} {:>7} {:>7}", "group", "n", "sel", "tpr", "fpr");
    for g in &inter.rates.groups {
        let f = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.3}"));
        println!("{:<16} {:>5} {:>7} {:>7} {:>7}", g.label, g.n, f(g.selection_rate), f(g.tpr), f(g.fpr));
    }
    println!();
    for row in report.gap_table() {
        let cells: Vec<String> = row
            .values
            .iter()
            .map(|(axis, v)| format!("{axis}={}", v.map_or("-".into(), |v| format!("{v:.3}"))))
            .collect();
        println!("{:<24} {}", row.metric, cells.join("  "));
    }
    Ok(())
}
