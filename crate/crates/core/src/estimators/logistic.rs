//! Binary logistic regression fitted by IRLS (Newton-Raphson on the
//! penalized log-likelihood) with step-halving.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{AuditError, Result};

/// Probabilities are clamped to `[PROB_EPS, 1 - PROB_EPS]`.
pub const PROB_EPS: f64 = 1e-12;

const MAX_HALVINGS: usize = 40;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitSettings {
    /// Ridge penalty on every coefficient except the intercept.
    pub l2: f64,
    /// Convergence tolerance on the infinity-norm of the penalized gradient.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for FitSettings {
    fn default() -> Self {
        FitSettings {
            l2: 1e-6,
            tol: 1e-8,
            max_iter: 100,
        }
    }
}

impl FitSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.l2 >= 0.0 && self.l2.is_finite()) {
            return Err(AuditError::config(format!("l2 must be a finite non-negative number, got {}", self.l2)));
        }
        if !(self.tol > 0.0) {
            return Err(AuditError::config(format!("tol must be positive, got {}", self.tol)));
        }
        if self.max_iter == 0 {
            return Err(AuditError::config("max_iter must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    /// Intercept first, then one coefficient per feature column (log-odds).
    pub coefficients: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub final_gradient_norm: f64,
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^z)` without overflow.
pub(crate) fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Row-major copy of `[1 | X]`.
pub(crate) fn design_rows(x: &DMatrix<f64>) -> Vec<f64> {
    let (n, p) = x.shape();
    let d = p + 1;
    let mut rows = vec![0.0; n * d];
    for i in 0..n {
        rows[i * d] = 1.0;
    }
    for j in 0..p {
        for (i, v) in x.column(j).iter().enumerate() {
            rows[i * d + j + 1] = *v;
        }
    }
    rows
}

/// Objective and its derivatives for a weighted, ridge-penalized logistic
/// log-likelihood. Exposed so tests can check gradients independently of the
/// solver.
pub struct LogisticObjective<'a> {
    rows: Vec<f64>,
    d: usize,
    y: &'a [f64],
    w: Option<&'a [f64]>,
    l2: f64,
}

impl<'a> LogisticObjective<'a> {
    pub fn new(x: &DMatrix<f64>, y: &'a [f64], weights: Option<&'a [f64]>, l2: f64) -> Self {
        LogisticObjective {
            rows: design_rows(x),
            d: x.ncols() + 1,
            y,
            w: weights,
            l2,
        }
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    fn weight(&self, i: usize) -> f64 {
        self.w.map_or(1.0, |w| w[i])
    }

    fn eta(&self, beta: &[f64], i: usize) -> f64 {
        let row = &self.rows[i * self.d..(i + 1) * self.d];
        row.iter().zip(beta).map(|(a, b)| a * b).sum()
    }

    fn penalty(&self, beta: &[f64]) -> f64 {
        0.5 * self.l2 * beta[1..].iter().map(|b| b * b).sum::<f64>()
    }

    /// Penalized log-likelihood (to be maximized).
    pub fn value(&self, beta: &[f64]) -> f64 {
        let ll: f64 = (0..self.y.len())
            .map(|i| {
                let eta = self.eta(beta, i);
                self.weight(i) * (self.y[i] * eta - softplus(eta))
            })
            .sum();
        ll - self.penalty(beta)
    }

    pub fn gradient(&self, beta: &[f64]) -> Vec<f64> {
        let d = self.d;
        let mut g = vec![0.0; d];
        for i in 0..self.y.len() {
            let r = self.weight(i) * (self.y[i] - sigmoid(self.eta(beta, i)));
            let row = &self.rows[i * d..(i + 1) * d];
            for (gj, xj) in g.iter_mut().zip(row) {
                *gj += r * xj;
            }
        }
        for j in 1..d {
            g[j] -= self.l2 * beta[j];
        }
        g
    }

    /// Negative Hessian (positive semi-definite).
    fn information(&self, beta: &[f64]) -> DMatrix<f64> {
        let d = self.d;
        let mut h = DMatrix::zeros(d, d);
        for i in 0..self.y.len() {
            let mu = sigmoid(self.eta(beta, i));
            let v = self.weight(i) * mu * (1.0 - mu);
            if v == 0.0 {
                continue;
            }
            let row = &self.rows[i * d..(i + 1) * d];
            for a in 0..d {
                let va = v * row[a];
                for b in a..d {
                    h[(a, b)] += va * row[b];
                }
            }
        }
        for a in 0..d {
            for b in 0..a {
                h[(a, b)] = h[(b, a)];
            }
        }
        for j in 1..d {
            h[(j, j)] += self.l2;
        }
        h
    }
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Fits `P(y = 1 | x) = sigmoid(b0 + x . b)` by penalized maximum likelihood.
///
/// `y` holds targets in `[0, 1]`; fractional targets give the quasi-binomial
/// fit used when regressing a soft score. `weights` are non-negative
/// observation weights.
pub fn fit_logistic(
    x: &DMatrix<f64>,
    y: &[f64],
    weights: Option<&[f64]>,
    settings: &FitSettings,
) -> Result<LogisticModel> {
    fit_logistic_traced(x, y, weights, settings).map(|(m, _)| m)
}

/// Same as [`fit_logistic`] but also returns the objective value after every
/// accepted iteration.
pub fn fit_logistic_traced(
    x: &DMatrix<f64>,
    y: &[f64],
    weights: Option<&[f64]>,
    settings: &FitSettings,
) -> Result<(LogisticModel, Vec<f64>)> {
    settings.validate()?;
    let n = y.len();
    if x.nrows() != n {
        return Err(AuditError::data(format!(
            "design has {} rows but target has {n}",
            x.nrows()
        )));
    }
    if n < 2 {
        return Err(AuditError::data("logistic regression needs at least 2 rows"));
    }
    if let Some(i) = y.iter().position(|v| !(0.0..=1.0).contains(v)) {
        return Err(AuditError::data(format!("target row {} outside [0, 1]", i + 1)));
    }
    if let Some(w) = weights {
        if w.len() != n {
            return Err(AuditError::data("weight vector length does not match rows"));
        }
        if w.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(AuditError::data("weights must be finite and non-negative"));
        }
    }

    let obj = LogisticObjective::new(x, y, weights, settings.l2);
    let d = obj.dim();

    // Start from the intercept-only solution.
    let wsum: f64 = (0..n).map(|i| obj.weight(i)).sum();
    let ybar = (0..n).map(|i| obj.weight(i) * y[i]).sum::<f64>() / wsum.max(f64::MIN_POSITIVE);
    let mut beta = vec![0.0; d];
    beta[0] = logit(ybar.clamp(1e-6, 1.0 - 1e-6));

    let mut value = obj.value(&beta);
    let mut trace = vec![value];
    let mut grad = obj.gradient(&beta);
    let mut gnorm = inf_norm(&grad);
    let mut iterations = 0;

    while gnorm >= settings.tol && iterations < settings.max_iter {
        iterations += 1;
        let info = obj.information(&beta);
        let chol = info.cholesky().ok_or_else(|| {
            AuditError::numerical(
                "singular IRLS system (collinear or constant features with l2 = 0)",
            )
        })?;
        let step = chol.solve(&DVector::from_column_slice(&grad));

        // Newton direction with step-halving; tiny relative slack absorbs
        // round-off once the objective is flat.
        let slack = 1e-12 * (1.0 + value.abs());
        let mut scale = 1.0;
        let mut accepted = None;
        for _ in 0..MAX_HALVINGS {
            let cand: Vec<f64> = beta.iter().zip(step.iter()).map(|(b, s)| b + scale * s).collect();
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
        beta = cand;
        value = v;
        trace.push(value);
        grad = obj.gradient(&beta);
        gnorm = inf_norm(&grad);
    }

    if beta.iter().any(|b| !b.is_finite()) {
        return Err(AuditError::numerical("logistic coefficients became non-finite"));
    }
    if settings.l2 == 0.0 && gnorm < settings.tol && separated(&obj, &beta) {
        return Err(AuditError::numerical(
            "logistic regression diverges: perfect separation with l2 = 0; set l2 > 0",
        ));
    }
    if gnorm >= settings.tol {
        let hint = if settings.l2 == 0.0 {
            " (possible perfect separation; set l2 > 0)"
        } else {
            ""
        };
        return Err(AuditError::numerical(format!(
            "logistic regression did not converge after {iterations} iterations, gradient norm {gnorm:.3e}{hint}"
        )));
    }
    Ok((
        LogisticModel {
            coefficients: beta,
            converged: true,
            iterations,
            final_gradient_norm: gnorm,
        },
        trace,
    ))
}

/// Detects the saturated optimum reached under perfect separation: every
/// binary target fitted to within 1e-6, or a linear predictor beyond 30.
fn separated(obj: &LogisticObjective<'_>, beta: &[f64]) -> bool {
    let binary = obj.y.iter().all(|&v| v == 0.0 || v == 1.0);
    let mut all_fitted = true;
    for i in 0..obj.y.len() {
        let eta = obj.eta(beta, i);
        if eta.abs() > 30.0 {
            return true;
        }
        all_fitted &= (obj.y[i] - sigmoid(eta)).abs() < 1e-6;
    }
    binary && all_fitted
}

impl LogisticModel {
    pub fn n_features(&self) -> usize {
        self.coefficients.len() - 1
    }

    pub fn linear_predictor(&self, x: &DMatrix<f64>) -> Result<Vec<f64>> {
        if x.ncols() != self.n_features() {
            return Err(AuditError::data(format!(
                "model expects {} features, got {}",
                self.n_features(),
                x.ncols()
            )));
        }
        let mut eta = vec![self.coefficients[0]; x.nrows()];
        for j in 0..x.ncols() {
            let b = self.coefficients[j + 1];
            if b == 0.0 {
                continue;
            }
            for (e, v) in eta.iter_mut().zip(x.column(j).iter()) {
                *e += b * v;
            }
        }
        Ok(eta)
    }

    /// Clamped probabilities `sigmoid(b0 + x . b)`.
    pub fn predict_proba(&self, x: &DMatrix<f64>) -> Result<Vec<f64>> {
        Ok(self
            .linear_predictor(x)?
            .into_iter()
            .map(|e| sigmoid(e).clamp(PROB_EPS, 1.0 - PROB_EPS))
            .collect())
    }
}

pub fn predict_proba(model: &LogisticModel, x: &DMatrix<f64>) -> Result<Vec<f64>> {
    model.predict_proba(x)
}
