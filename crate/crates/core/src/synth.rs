//! Synthetic audit tables with a known per-group logit shift.

use std::io::Write;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{AuditError, Result};
use crate::estimators::sigmoid;
use crate::resampling::{derive_seed, rng_from_seed};

/// One categorical attribute; levels are drawn uniformly.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynthAttribute {
    pub name: String,
    pub levels: Vec<String>,
}

impl SynthAttribute {
    pub fn new<S: Into<String>>(name: impl Into<String>, levels: impl IntoIterator<Item = S>) -> Self {
        SynthAttribute {
            name: name.into(),
            levels: levels.into_iter().map(Into::into).collect(),
        }
    }
}

/// Generator settings.
///
/// `group_bias` lists one logit shift per combination of levels, row-major
/// in attribute order (the last attribute varies fastest). Empty means no
/// shift. With levels listed in sorted order this is also the order of the
/// group labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSpec {
    pub n: usize,
    pub attributes: Vec<SynthAttribute>,
    pub intercept: f64,
    /// One coefficient per covariate; the covariate count is its length.
    pub coefficients: Vec<f64>,
    pub group_bias: Vec<f64>,
    /// Adds an independent Bernoulli treatment column `d`.
    pub treatment_rate: Option<f64>,
    /// Adds a `score` column `sigmoid(eta + sd * noise)` with standard
    /// normal noise, as a stand-in for an external model's predictions.
    pub score_noise: Option<f64>,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            n: 2000,
            attributes: vec![
                SynthAttribute::new("race", ["Black", "White"]),
                SynthAttribute::new("gender", ["Female", "Male"]),
            ],
            intercept: -1.0,
            coefficients: vec![1.0, -0.75, 0.5],
            group_bias: Vec::new(),
            treatment_rate: None,
            score_noise: None,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn n_groups(&self) -> usize {
        self.attributes.iter().map(|a| a.levels.len()).product()
    }

    pub fn p(&self) -> usize {
        self.coefficients.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(AuditError::config("synthetic n must be positive"));
        }
        if self.attributes.is_empty() {
            return Err(AuditError::config("at least one attribute is required"));
        }
        for a in &self.attributes {
            if a.levels.is_empty() {
                return Err(AuditError::config(format!("attribute '{}' has no levels", a.name)));
            }
        }
        if !self.group_bias.is_empty() && self.group_bias.len() != self.n_groups() {
            return Err(AuditError::config(format!(
                "group_bias has {} entries for {} groups",
                self.group_bias.len(),
                self.n_groups()
            )));
        }
        let finite = std::iter::once(self.intercept)
            .chain(self.coefficients.iter().copied())
            .chain(self.group_bias.iter().copied())
            .all(f64::is_finite);
        if !finite {
            return Err(AuditError::config("coefficients and biases must be finite"));
        }
        if let Some(r) = self.treatment_rate {
            if !(0.0..=1.0).contains(&r) {
                return Err(AuditError::config(format!("treatment_rate {r} outside [0, 1]")));
            }
        }
        if let Some(sd) = self.score_noise {
            if !(sd >= 0.0 && sd.is_finite()) {
                return Err(AuditError::config(format!("score_noise must be a non-negative number, got {sd}")));
            }
        }
        Ok(())
    }
}

/// Draws the table row by row: levels, covariates, outcome, then the
/// optional treatment and score. Same spec, same rows.
pub fn generate_synthetic(spec: &SynthSpec) -> Result<Dataset> {
    spec.validate()?;
    let (n, p) = (spec.n, spec.p());
    let mut rng = rng_from_seed(derive_seed(spec.seed, "synth", 0));
    let mut levels: Vec<Vec<String>> = vec![Vec::with_capacity(n); spec.attributes.len()];
    let mut x = Vec::with_capacity(n * p);
    let mut y = Vec::with_capacity(n);
    let mut d = Vec::new();
    let mut score = Vec::new();
    for _ in 0..n {
        let mut combo = 0;
        for (a, out) in spec.attributes.iter().zip(levels.iter_mut()) {
            let l = rng.random_range(0..a.levels.len());
            combo = combo * a.levels.len() + l;
            out.push(a.levels[l].clone());
        }
        let mut eta = spec.intercept + spec.group_bias.get(combo).copied().unwrap_or(0.0);
        for b in &spec.coefficients {
            let v: f64 = rng.sample(StandardNormal);
            eta += b * v;
            x.push(v);
        }
        y.push(u8::from(rng.random::<f64>() < sigmoid(eta)));
        if let Some(rate) = spec.treatment_rate {
            d.push(u8::from(rng.random::<f64>() < rate));
        }
        if let Some(sd) = spec.score_noise {
            let e: f64 = rng.sample(StandardNormal);
            score.push(sigmoid(eta + sd * e));
        }
    }
    let names = (1..=p).map(|j| format!("x{j}")).collect();
    let mut ds = Dataset::new(DMatrix::from_row_slice(n, p, &x), names, y)?;
    if spec.treatment_rate.is_some() {
        ds = ds.with_treatment(d)?;
    }
    if spec.score_noise.is_some() {
        ds = ds.with_score(score)?;
    }
    for (a, vals) in spec.attributes.iter().zip(levels) {
        ds = ds.with_protected(a.name.clone(), vals)?;
    }
    Ok(ds)
}

/// Writes features, protected columns, `y`, then `d` and `score` when
/// present. Floats use the shortest round-trip representation.
pub fn write_csv<W: Write>(dataset: &Dataset, writer: W) -> Result<()> {
    let err = |e: csv::Error| AuditError::data(format!("cannot write CSV: {e}"));
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<String> = dataset.feature_names().to_vec();
    header.extend(dataset.protected().iter().map(|c| c.name.clone()));
    header.push("y".into());
    if dataset.treatment().is_some() {
        header.push("d".into());
    }
    if dataset.score().is_some() {
        header.push("score".into());
    }
    w.write_record(&header).map_err(err)?;
    for i in 0..dataset.n() {
        let mut rec: Vec<String> = (0..dataset.p()).map(|j| dataset.features()[(i, j)].to_string()).collect();
        rec.extend(dataset.protected().iter().map(|c| c.values[i].clone()));
        rec.push(dataset.outcome()[i].to_string());
        if let Some(d) = dataset.treatment() {
            rec.push(d[i].to_string());
        }
        if let Some(s) = dataset.score() {
            rec.push(s[i].to_string());
        }
        w.write_record(&rec).map_err(err)?;
    }
    w.flush().map_err(|e| AuditError::data(format!("cannot write CSV: {e}")))?;
    Ok(())
}
