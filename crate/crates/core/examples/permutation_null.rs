//! Builds a permutation null for a custom statistic (the spread of group
//! prevalence) and turns it into a u-value. Iteration seeds derive from the
//! master seed, so the result does not depend on the thread count.
//!
//!     cargo run --example permutation_null

use fairaudit::data::{build_intersections, GroupIndex, ProtectedSpec};
use fairaudit::report::histogram;
use fairaudit::resampling::{permute_groups, run_permutations, StatMap, UValueTable};
use fairaudit::synth::{generate_synthetic, SynthSpec};

fn spread(index: &GroupIndex, y: &[u8]) -> f64 {
    let mut pos = vec![0.0; index.n_groups()];
    for (i, &g) in index.assignment().iter().enumerate() {
        pos[g] += f64::from(y[i]);
    }
    let rates: Vec<f64> = pos.iter().zip(index.counts()).map(|(p, &c)| p / c as f64).collect();
    rates.iter().copied().fold(f64::NEG_INFINITY, f64::max) - rates.iter().copied().fold(f64::INFINITY, f64::min)
}

fn main() -> fairaudit::error::Result<()> {
    for bias in [0.0, 0.8] {
        let data = generate_synthetic(&SynthSpec {
            n: 3000,
            group_bias: vec![bias, 0.0, 0.0, 0.0],
            seed: 9,
            ..SynthSpec::default()
        })?;
        let index = build_intersections(&data, &ProtectedSpec::new(["race", "gender"]))?;
        let stat = |idx: &GroupIndex| StatMap::from([("prevalence.spread".to_string(), Some(spread(idx, data.outcome())))]);
        let null = run_permutations(500, 2024, "example", |seed, _| Ok(stat(&permute_groups(&index, seed))))?;
        let table = UValueTable::build(&stat(&index), &null, 0.05, 0.05)?;
        let row = &table.rows[0];
        println!(
            "bias {bias:+.1}: observed {:.4}, null q95 {:.4}, u {:.4}{}",
            row.observed,
            row.null_quantile,
            row.u_value,
            if row.flagged { " (flagged)" } else { "" }
        );
        let bins = histogram(&null.samples["prevalence.spread"], 10);
        for b in bins {
            println!("  [{:.3}, {:.3}) {}", b.lower, b.upper, "#".repeat(b.count / 5));
        }
    }
    Ok(())
}
