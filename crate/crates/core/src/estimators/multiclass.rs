//! Reference-category softmax regression, used for group propensities
//! `P(G = g | X)`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::logistic::{design_rows, FitSettings, PROB_EPS};
use crate::data::GroupIndex;
use crate::error::{AuditError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MulticlassModel {
    /// One row per non-reference class `1..k`, each `[intercept, b_1..b_p]`.
    /// Class 0 is the reference with all-zero coefficients.
    pub coefficients: Vec<Vec<f64>>,
    pub converged: bool,
    pub iterations: usize,
    pub final_gradient_norm: f64,
}

impl MulticlassModel {
    pub fn n_classes(&self) -> usize {
        self.coefficients.len() + 1
    }

    /// Class probabilities per row. Each is at least `PROB_EPS` and each row
    /// sums to one.
    pub fn predict_proba(&self, x: &DMatrix<f64>) -> Result<Vec<Vec<f64>>> {
        let p = x.ncols();
        if self.coefficients.iter().any(|c| c.len() != p + 1) {
            return Err(AuditError::data(format!(
                "propensity model expects {} features, got {p}",
                self.coefficients.first().map_or(0, |c| c.len() - 1)
            )));
        }
        let rows = design_rows(x);
        let d = p + 1;
        Ok((0..x.nrows())
            .map(|i| {
                let row = &rows[i * d..(i + 1) * d];
                let mut probs = softmax_row(&self.coefficients, row);
                let mut total = 0.0;
                for v in &mut probs {
                    *v = v.max(PROB_EPS);
                    total += *v;
                }
                for v in &mut probs {
                    *v /= total;
                }
                probs
            })
            .collect())
    }
}

fn softmax_row(coef: &[Vec<f64>], row: &[f64]) -> Vec<f64> {
    let mut etas = Vec::with_capacity(coef.len() + 1);
    etas.push(0.0);
    for c in coef {
        etas.push(c.iter().zip(row).map(|(a, b)| a * b).sum());
    }
    let m = etas.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for e in &mut etas {
        *e = (*e - m).exp();
        total += *e;
    }
    etas.iter().map(|e| e / total).collect()
}

fn log_sum_exp(etas: &[f64]) -> f64 {
    let m = etas.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + etas.iter().map(|e| (e - m).exp()).sum::<f64>().ln()
}

struct SoftmaxObjective<'a> {
    rows: Vec<f64>,
    d: usize,
    k: usize,
    labels: &'a [usize],
    l2: f64,
}

impl SoftmaxObjective<'_> {
    fn unpack(&self, theta: &[f64]) -> Vec<Vec<f64>> {
        theta.chunks(self.d).map(<[f64]>::to_vec).collect()
    }

    fn etas(&self, coef: &[Vec<f64>], i: usize) -> Vec<f64> {
        let row = &self.rows[i * self.d..(i + 1) * self.d];
        let mut out = vec![0.0];
        out.extend(coef.iter().map(|c| c.iter().zip(row).map(|(a, b)| a * b).sum::<f64>()));
        out
    }

    fn value(&self, theta: &[f64]) -> f64 {
        let coef = self.unpack(theta);
        let ll: f64 = self
            .labels
            .iter()
            .enumerate()
            .map(|(i, &g)| {
                let e = self.etas(&coef, i);
                e[g] - log_sum_exp(&e)
            })
            .sum();
        let pen: f64 = coef.iter().map(|c| c[1..].iter().map(|b| b * b).sum::<f64>()).sum();
        ll - 0.5 * self.l2 * pen
    }

    /// Gradient and negative Hessian.
    fn derivatives(&self, theta: &[f64]) -> (Vec<f64>, DMatrix<f64>) {
        let (d, k) = (self.d, self.k);
        let m = (k - 1) * d;
        let coef = self.unpack(theta);
        let mut g = vec![0.0; m];
        let mut h = DMatrix::zeros(m, m);
        for (i, &lab) in self.labels.iter().enumerate() {
            let row = &self.rows[i * d..(i + 1) * d];
            let probs = softmax_row(&coef, row);
            for a in 1..k {
                let r = f64::from(u8::from(lab == a)) - probs[a];
                let off_a = (a - 1) * d;
                for j in 0..d {
                    g[off_a + j] += r * row[j];
                }
                for b in a..k {
                    let w = if a == b {
                        probs[a] * (1.0 - probs[a])
                    } else {
                        -probs[a] * probs[b]
                    };
                    if w == 0.0 {
                        continue;
                    }
                    let off_b = (b - 1) * d;
                    for j in 0..d {
                        let wj = w * row[j];
                        for l in 0..d {
                            h[(off_a + j, off_b + l)] += wj * row[l];
                        }
                    }
                }
            }
        }
        // Blocks with b > a were filled in full; mirror them below the diagonal.
        for a in 1..k {
            for b in (a + 1)..k {
                for j in 0..d {
                    for l in 0..d {
                        h[((b - 1) * d + l, (a - 1) * d + j)] = h[((a - 1) * d + j, (b - 1) * d + l)];
                    }
                }
            }
        }
        for a in 0..(k - 1) {
            for j in 1..d {
                g[a * d + j] -= self.l2 * theta[a * d + j];
                h[(a * d + j, a * d + j)] += self.l2;
            }
        }
        (g, h)
    }
}

/// Softmax regression of `labels` (values `0..k`) on `x` by Newton's method
/// with step-halving.
pub fn fit_multiclass(
    x: &DMatrix<f64>,
    labels: &[usize],
    k: usize,
    settings: &FitSettings,
) -> Result<MulticlassModel> {
    settings.validate()?;
    if k < 2 {
        return Err(AuditError::config(format!("propensity model needs at least 2 groups, got {k}")));
    }
    if x.nrows() != labels.len() {
        return Err(AuditError::data("design rows do not match label count"));
    }
    let mut counts = vec![0usize; k];
    for &l in labels {
        if l >= k {
            return Err(AuditError::data(format!("class label {l} out of range for {k} classes")));
        }
        counts[l] += 1;
    }
    let n = labels.len();
    let d = x.ncols() + 1;
    let obj = SoftmaxObjective {
        rows: design_rows(x),
        d,
        k,
        labels,
        l2: settings.l2,
    };

    // Intercepts start at the empirical log-ratios against the reference.
    let mut theta = vec![0.0; (k - 1) * d];
    let base = (counts[0].max(1) as f64) / n as f64;
    for a in 1..k {
        let pa = (counts[a].max(1) as f64) / n as f64;
        theta[(a - 1) * d] = (pa / base).ln();
    }

    let mut value = obj.value(&theta);
    let (mut grad, mut info) = obj.derivatives(&theta);
    let mut gnorm = grad.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut iterations = 0;
    while gnorm >= settings.tol && iterations < settings.max_iter {
        iterations += 1;
        let chol = info
            .clone()
            .cholesky()
            .ok_or_else(|| AuditError::numerical("singular propensity Newton system"))?;
        let step = chol.solve(&DVector::from_column_slice(&grad));
        let slack = 1e-12 * (1.0 + value.abs());
        let mut scale = 1.0;
        let mut accepted = None;
        for _ in 0..40 {
            let cand: Vec<f64> = theta.iter().zip(step.iter()).map(|(t, s)| t + scale * s).collect();
            let v = obj.value(&cand);
            if v.is_finite() && v >= value - slack {
                accepted = Some((cand, v));
                break;
            }
            scale *= 0.5;
        }
        let Some((cand, v)) = accepted else {
            break;
        };
        theta = cand;
        value = v;
        (grad, info) = obj.derivatives(&theta);
        gnorm = grad.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    }
    if gnorm >= settings.tol {
        return Err(AuditError::numerical(format!(
            "propensity model did not converge after {iterations} iterations, gradient norm {gnorm:.3e}"
        )));
    }
    Ok(MulticlassModel {
        coefficients: obj.unpack(&theta),
        converged: true,
        iterations,
        final_gradient_norm: gnorm,
    })
}

/// Group propensity model `P(G = g | X)` over the groups of `index`.
pub fn fit_propensity(
    x: &DMatrix<f64>,
    index: &GroupIndex,
    settings: &FitSettings,
) -> Result<MulticlassModel> {
    fit_multiclass(x, index.assignment(), index.n_groups(), settings)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimators::logistic::fit_logistic;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn two_classes_match_binary_logistic() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 300;
        let x = DMatrix::from_fn(n, 2, |_, _| rng.random_range(-1.5..1.5));
        let labels: Vec<usize> = (0..n)
            .map(|i| {
                let p = crate::estimators::sigmoid(0.2 + 0.8 * x[(i, 0)] - 0.5 * x[(i, 1)]);
                usize::from(rng.random::<f64>() < p)
            })
            .collect();
        let settings = FitSettings::default();
        let multi = fit_multiclass(&x, &labels, 2, &settings).unwrap();
        let y: Vec<f64> = labels.iter().map(|&l| l as f64).collect();
        let bin = fit_logistic(&x, &y, None, &settings).unwrap();
        for (a, b) in multi.coefficients[0].iter().zip(&bin.coefficients) {
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
    }

    #[test]
    fn no_signal_recovers_group_frequencies() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 5000;
        let x = DMatrix::from_fn(n, 2, |_, _| rng.random_range(-1.0..1.0));
        let freqs = [0.1, 0.2, 0.3, 0.4];
        let labels: Vec<usize> = (0..n)
            .map(|_| {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                freqs
                    .iter()
                    .position(|f| {
                        acc += f;
                        u < acc
                    })
                    .unwrap_or(3)
            })
            .collect();
        let idx = GroupIndex::from_assignment(labels.clone(), (0..4).map(|g| g.to_string()).collect()).unwrap();
        let m = fit_propensity(&x, &idx, &FitSettings::default()).unwrap();
        let probs = m.predict_proba(&x).unwrap();
        let mut empirical = [0.0; 4];
        for &l in &labels {
            empirical[l] += 1.0 / n as f64;
        }
        let mut mean = [0.0; 4];
        for row in &probs {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            for (g, p) in row.iter().enumerate() {
                assert!(*p > 0.0 && *p < 1.0);
                mean[g] += p / n as f64;
            }
        }
        for g in 0..4 {
            // The intercept score equation makes the averages match exactly;
            // against the generating frequency the tolerance is 0.02.
            assert!((mean[g] - empirical[g]).abs() < 1e-9);
            assert!((mean[g] - freqs[g]).abs() < 0.02, "group {g}: {} vs {}", mean[g], freqs[g]);
        }
    }

    #[test]
    fn gradient_is_small_at_solution() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 400;
        let x = DMatrix::from_fn(n, 3, |_, _| rng.random_range(-1.0..1.0));
        let labels: Vec<usize> = (0..n).map(|i| ((x[(i, 0)] + 1.0) * 1.5) as usize % 3).collect();
        let m = fit_multiclass(&x, &labels, 3, &FitSettings { l2: 0.5, ..FitSettings::default() }).unwrap();
        assert!(m.converged && m.final_gradient_norm < 1e-8);
    }

    #[test]
    fn rejects_single_class() {
        let x = DMatrix::zeros(3, 1);
        assert!(matches!(fit_multiclass(&x, &[0, 0, 0], 1, &FitSettings::default()), Err(AuditError::Config(_))));
    }
}
