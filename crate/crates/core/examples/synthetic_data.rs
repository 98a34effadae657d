//! Generates a 2x2 table with a logit shift for one subgroup, writes it as
//! CSV and prints prevalence per group.
//!
//!     cargo run --example synthetic_data -- /tmp/synth.csv

use fairaudit::data::{build_intersections, ProtectedSpec};
use fairaudit::synth::{generate_synthetic, write_csv, SynthSpec};

fn main() -> fairaudit::error::Result<()> {
    let spec = SynthSpec {
        n: 10_000,
        group_bias: vec![2.0, 0.0, 0.0, 0.0],
        treatment_rate: Some(0.25),
        seed: 42,
        ..SynthSpec::default()
    };
    let data = generate_synthetic(&spec)?;
    let index = build_intersections(&data, &ProtectedSpec::new(["race", "gender"]))?;
    for (g, label) in index.labels().iter().enumerate() {
        let rows: Vec<usize> = (0..data.n()).filter(|&i| index.assignment()[i] == g).collect();
        let pos = rows.iter().filter(|&&i| data.outcome()[i] == 1).count();
        println!(
            "{label:<16} n {:>5}  bias {:+.1}  prevalence {:.3}",
            rows.len(),
            spec.group_bias[g],
            pos as f64 / rows.len() as f64
        );
    }
    if let Some(path) = std::env::args().nth(1) {
        let file = std::fs::File::create(&path).map_err(|e| fairaudit::error::AuditError::io(&path, e))?;
        write_csv(&data, std::io::BufWriter::new(file))?;
        println!("wrote {path}");
    }
    Ok(())
}
