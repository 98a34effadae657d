//! Fits the built-in penalized logistic regression and picks the threshold
//! that maximizes TPR - FPR on the training scores.
//!
//!     cargo run --example logistic_youden

use fairaudit::estimators::{apply_threshold, fit_logistic, youden_threshold, FitSettings};
use fairaudit::observational::{accuracy, auroc};
use fairaudit::synth::{generate_synthetic, SynthSpec};

fn main() -> fairaudit::error::Result<()> {
    let data = generate_synthetic(&SynthSpec { n: 3000, seed: 5, ..SynthSpec::default() })?;
    let model = fit_logistic(data.features(), &data.outcome_f64(), None, &FitSettings::default())?;
    println!(
        "coefficients {:?}\n{} iterations, gradient inf-norm {:.2e}",
        model.coefficients.iter().map(|b| (b * 1000.0).round() / 1000.0).collect::<Vec<_>>(),
        model.iterations,
        model.final_gradient_norm
    );
    let scores = model.predict_proba(data.features())?;
    let y = data.outcome();
    let youden = youden_threshold(&scores, y)?;
    println!("AUROC {:.4}", auroc(&scores, y)?);
    for (name, t) in [("fixed 0.5", 0.5), ("youden", youden.threshold)] {
        let labels = apply_threshold(&scores, t);
        println!("{name:<10} threshold {t:.4}  accuracy {:.4}", accuracy(&labels, y));
    }
    println!("Youden J at optimum {:.4}", youden.j);
    Ok(())
}
