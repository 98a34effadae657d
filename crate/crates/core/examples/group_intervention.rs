//! Group membership as the intervention: each person's score is recomputed
//! as if they belonged to every group. Runs the single-robust and the doubly
//! robust estimator on an external score and prints both.
//!
//!     cargo run --example group_intervention

use fairaudit::counterfactual::general::{run_component3, EstimationMode, GeneralConfig};
use fairaudit::counterfactual::max_statistic_u;
use fairaudit::data::ProtectedSpec;
use fairaudit::synth::{generate_synthetic, SynthSpec};

fn main() -> fairaudit::error::Result<()> {
    let data = generate_synthetic(&SynthSpec {
        n: 5000,
        group_bias: vec![1.5, 0.0, 0.0, 0.0],
        score_noise: Some(0.5),
        seed: 3,
        ..SynthSpec::default()
    })?;
    let mut cfg = GeneralConfig::new(ProtectedSpec::new(["race", "gender"]));
    cfg.use_external_score = true;
    cfg.mode = EstimationMode::Dr;
    cfg.resampling.n_permutations = 200;
    cfg.resampling.n_bootstrap = 0;
    let audit = run_component3(&data, &cfg)?;

    println!("group effects (logits vs first group):");
    for (label, effect) in &audit.metadata.group_effects {
        println!("  {label:<16} {effect:+.3}");
    }
    let sr = audit.sr_rates.as_ref().expect("kept in DR mode");
    println!("\n{:<16} {:>8} {:>8} {:>8} {:>8}", "group", "cFPR sr", "cFPR dr", "cFNR sr", "cFNR dr");
    for (dr, sr) in audit.rates.groups.iter().zip(&sr.groups) {
        let f = |v: Option<f64>| v.map_or(f64::NAN, |v| v);
        println!(
            "{:<16} {:>8.4} {:>8.4} {:>8.4} {:>8.4}",
            dr.label,
            f(sr.cfpr),
            f(dr.cfpr),
            f(sr.cfnr),
            f(dr.cfnr)
        );
    }
    println!();
    for r in &audit.u_values.rows {
        println!("{:<14} observed {:.4}  u {:.4}", r.statistic, r.observed, r.u_value);
    }
    println!("max-statistic u: {:.4}", max_statistic_u(&audit.u_values).unwrap_or(0.0));
    Ok(())
}
