//! Counterfactual error rates when a treatment changes the outcome it is
//! meant to prevent: rates are measured against the untreated outcome, with
//! inverse-propensity weights for the false negative side.
//!
//!     cargo run --example treatment_counterfactual

use fairaudit::counterfactual::treatment::{run_component2, TreatmentConfig};
use fairaudit::data::ProtectedSpec;
use fairaudit::synth::{generate_synthetic, SynthSpec};

fn main() -> fairaudit::error::Result<()> {
    let data = generate_synthetic(&SynthSpec {
        n: 4000,
        group_bias: vec![1.0, 0.0, 0.0, 0.0],
        treatment_rate: Some(0.3),
        seed: 7,
        ..SynthSpec::default()
    })?;
    let mut cfg = TreatmentConfig::new(ProtectedSpec::new(["race", "gender"]));
    cfg.seed = 7;
    cfg.resampling.n_permutations = 100;
    cfg.resampling.n_bootstrap = 50;
    cfg.min_eff = 30.0;
    let audit = run_component2(&data, &cfg)?;

    let m = &audit.metadata;
    println!(
        "threshold {:.2}, {} of {} treated, mean propensity {:.3}, {} clamped",
        m.threshold, m.n_treated, m.n, m.mean_propensity, m.n_propensity_clamped
    );
    for g in &audit.rates.groups {
        println!(
            "{:<16} cFPR {:.3} (n {:>4.0})  cFNR {:.3} (weight {:>6.1})",
            g.label,
            g.cfpr.unwrap_or(f64::NAN),
            g.cfpr_weight,
            g.cfnr.unwrap_or(f64::NAN),
            g.cfnr_weight
        );
    }
    println!();
    for r in &audit.u_values.rows {
        if r.statistic.contains(".pair.") {
            continue;
        }
        let ci = audit.bootstrap.as_ref().and_then(|b| b.intervals.get(&r.statistic));
        println!(
            "{:<14} observed {:.4}  null q95 {:.4}  u {:.4}{}  ci {}",
            r.statistic,
            r.observed,
            r.null_quantile,
            r.u_value,
            if r.flagged { " *" } else { "" },
            ci.map_or("-".into(), |c| format!("[{:.3}, {:.3}]", c.lower, c.upper))
        );
    }
    Ok(())
}
