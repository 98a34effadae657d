//! Group membership as the intervention: counterfactual error rates from an
//! outcome model evaluated with every row assigned to each group in turn.
//!
//! Single-robust (SR) rates standardize the model's scores over the observed
//! covariates; doubly-robust (DR) rates add an inverse-propensity-weighted
//! residual correction (AIPW).

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::treatment::scored_cohort;
use super::{
    aggregate_unfairness, statistics, CFErrorRates, ErrorAggregates, ErrorKind, VarianceOver,
    WeightedRate, PROPENSITY_CLAMP,
};
use crate::data::{Dataset, GroupIndex, ProtectedSpec, RemovedGroup, DEFAULT_MIN_GROUP_N};
use crate::error::{AuditError, Result};
use crate::estimators::{
    fit_logistic, fit_multiclass, sigmoid, with_group_indicators, FitSettings, LogisticModel,
    ThresholdPolicy, PROB_EPS,
};
use crate::observational::ScoreSource;
use crate::resampling::{
    bootstrap_indices, permute_groups, run_bootstrap, run_permutations, BootstrapResult,
    NullDistribution, ResamplingSettings, StatMap, UValueTable,
};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimationMode {
    #[default]
    Sr,
    Dr,
}

/// Probability-scale (soft) or thresholded (hard) error rates.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreScale {
    #[default]
    Soft,
    Hard,
}

/// Logistic model on `[X | group indicators]`; coefficients are
/// `[intercept, x.., group 1 .. group k-1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct OutcomeModel {
    pub model: LogisticModel,
    pub n_groups: usize,
}

impl OutcomeModel {
    pub fn fit(x: &DMatrix<f64>, target: &[f64], index: &GroupIndex, settings: &FitSettings) -> Result<Self> {
        let k = index.n_groups();
        let design = with_group_indicators(x, index.assignment(), k);
        Ok(OutcomeModel {
            model: fit_logistic(&design, target, None, settings)?,
            n_groups: k,
        })
    }

    /// Wraps a covariate-only model with zero group coefficients.
    pub fn group_blind(model: &LogisticModel, n_groups: usize) -> Self {
        let mut m = model.clone();
        m.coefficients.extend(std::iter::repeat_n(0.0, n_groups.saturating_sub(1)));
        OutcomeModel { model: m, n_groups }
    }

    fn n_covariates(&self) -> usize {
        self.model.coefficients.len() - self.n_groups
    }

    /// Coefficient of each group relative to group 0 (first entry 0).
    pub fn group_effects(&self) -> Vec<f64> {
        let p = self.n_covariates();
        std::iter::once(0.0)
            .chain(self.model.coefficients[p + 1..].iter().copied())
            .collect()
    }

    /// Linear predictor without the group term.
    fn base_eta(&self, x: &DMatrix<f64>) -> Result<Vec<f64>> {
        let p = self.n_covariates();
        if x.ncols() != p {
            return Err(AuditError::data(format!("outcome model expects {p} covariates, got {}", x.ncols())));
        }
        let b = &self.model.coefficients;
        let mut eta = vec![b[0]; x.nrows()];
        for j in 0..p {
            let bj = b[j + 1];
            for (e, v) in eta.iter_mut().zip(x.column(j).iter()) {
                *e += bj * v;
            }
        }
        Ok(eta)
    }

    /// `s(x_i, g)` for every group: `out[g][i]`.
    pub fn counterfactual_scores(&self, x: &DMatrix<f64>) -> Result<Vec<Vec<f64>>> {
        let eta = self.base_eta(x)?;
        Ok(self
            .group_effects()
            .iter()
            .map(|&gamma| {
                eta.iter()
                    .map(|&e| sigmoid(e + gamma).clamp(PROB_EPS, 1.0 - PROB_EPS))
                    .collect()
            })
            .collect())
    }

    /// `s(x_i, G_i)`: scores under the observed assignment.
    pub fn observed_scores(&self, x: &DMatrix<f64>, index: &GroupIndex) -> Result<Vec<f64>> {
        let cf = self.counterfactual_scores(x)?;
        Ok(index.assignment().iter().enumerate().map(|(i, &g)| cf[g][i]).collect())
    }
}

fn to_scale(s: f64, hard_threshold: Option<f64>) -> f64 {
    match hard_threshold {
        Some(t) => f64::from(u8::from(s >= t)),
        None => s,
    }
}

/// Per-row error contribution: the score among negatives, its complement
/// among positives.
fn error_of(kind: ErrorKind, s: f64) -> f64 {
    match kind {
        ErrorKind::Cfpr => s,
        ErrorKind::Cfnr => 1.0 - s,
    }
}

fn stratum(kind: ErrorKind) -> u8 {
    match kind {
        ErrorKind::Cfpr => 0,
        ErrorKind::Cfnr => 1,
    }
}

/// `sum over the stratum of error(s(x_i, g))` and the stratum size.
fn sr_sum(kind: ErrorKind, cf_g: &[f64], y: &[u8], hard_threshold: Option<f64>) -> (f64, f64) {
    let want = stratum(kind);
    let (mut sum, mut m) = (0.0, 0.0);
    for (&s, &yi) in cf_g.iter().zip(y) {
        if yi == want {
            sum += error_of(kind, to_scale(s, hard_threshold));
            m += 1.0;
        }
    }
    (sum, m)
}

fn sr_from_scores(cf: &[Vec<f64>], y: &[u8], index: &GroupIndex, hard_threshold: Option<f64>) -> CFErrorRates {
    let per_kind = |kind| -> Vec<WeightedRate> {
        cf.iter()
            .map(|cf_g| {
                let (sum, m) = sr_sum(kind, cf_g, y, hard_threshold);
                WeightedRate::from_sums(sum, m)
            })
            .collect()
    };
    CFErrorRates::new(index, &per_kind(ErrorKind::Cfpr), &per_kind(ErrorKind::Cfnr))
}

/// SR rates: cFPR(g) is the mean over `Y = 0` rows of `s(x_i, g)`, cFNR(g)
/// the mean over `Y = 1` rows of `1 - s(x_i, g)`.
pub fn sr_counterfactual_rates(
    model: &OutcomeModel,
    x: &DMatrix<f64>,
    y: &[u8],
    index: &GroupIndex,
    hard_threshold: Option<f64>,
) -> Result<CFErrorRates> {
    check_rows(x, y, index)?;
    Ok(sr_from_scores(&model.counterfactual_scores(x)?, y, index, hard_threshold))
}

fn check_rows(x: &DMatrix<f64>, y: &[u8], index: &GroupIndex) -> Result<()> {
    if x.nrows() != y.len() || y.len() != index.n_rows() {
        return Err(AuditError::data(format!(
            "row mismatch: {} covariate rows, {} outcomes, {} group rows",
            x.nrows(),
            y.len(),
            index.n_rows()
        )));
    }
    Ok(())
}

/// `own[i] = e_{G_i}(x_i)`: probability of the row's own group given its
/// covariates, estimated within its outcome stratum.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupPropensity {
    pub own: Vec<f64>,
    pub clamp: f64,
}

/// Softmax model of group on covariates, fit separately among `Y = 0` and
/// `Y = 1` rows over the groups present there. A stratum holding a single
/// group gets propensity 1.
pub fn fit_group_propensity(
    x: &DMatrix<f64>,
    y: &[u8],
    index: &GroupIndex,
    settings: &FitSettings,
) -> Result<GroupPropensity> {
    check_rows(x, y, index)?;
    let mut own = vec![1.0; y.len()];
    for v in [0u8, 1] {
        let rows: Vec<usize> = (0..y.len()).filter(|&i| y[i] == v).collect();
        let mut remap = vec![usize::MAX; index.n_groups()];
        let mut present = 0;
        for &i in &rows {
            let g = index.assignment()[i];
            if remap[g] == usize::MAX {
                remap[g] = 0;
                present += 1;
            }
        }
        if present < 2 {
            continue;
        }
        // Dense ids in group order.
        let mut next = 0;
        for slot in remap.iter_mut().filter(|s| **s != usize::MAX) {
            *slot = next;
            next += 1;
        }
        let labels: Vec<usize> = rows.iter().map(|&i| remap[index.assignment()[i]]).collect();
        let xs = x.select_rows(rows.iter());
        let model = fit_multiclass(&xs, &labels, present, settings)?;
        let probs = model.predict_proba(&xs)?;
        for (r, &i) in rows.iter().enumerate() {
            own[i] = probs[r][labels[r]].clamp(PROPENSITY_CLAMP, 1.0 - PROPENSITY_CLAMP);
        }
    }
    Ok(GroupPropensity {
        own,
        clamp: PROPENSITY_CLAMP,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DrRates {
    /// Augmented estimates, clipped to `[0, 1]`.
    pub rates: CFErrorRates,
    /// The outcome-model term alone; equals the SR estimate.
    pub sr: CFErrorRates,
    pub clip_events: usize,
    /// `"<label>: <kind>"` where the group is absent from the stratum and SR
    /// was used instead.
    pub fallbacks: Vec<String>,
}

/// AIPW rates: over stratum rows, mean of
/// `s(x_i, g) + 1{G_i = g} / e_g(x_i) (S_i - s(x_i, g))` on the error scale.
pub fn dr_counterfactual_rates(
    model: &OutcomeModel,
    propensity: &GroupPropensity,
    x: &DMatrix<f64>,
    y: &[u8],
    observed: &[f64],
    index: &GroupIndex,
    hard_threshold: Option<f64>,
) -> Result<DrRates> {
    check_rows(x, y, index)?;
    if observed.len() != y.len() || propensity.own.len() != y.len() {
        return Err(AuditError::data("observed scores or propensities do not match the row count"));
    }
    let cf = model.counterfactual_scores(x)?;
    let sr = sr_from_scores(&cf, y, index, hard_threshold);
    let mut clip_events = 0;
    let mut fallbacks = Vec::new();
    let mut per_kind = |kind: ErrorKind| -> Vec<WeightedRate> {
        let want = stratum(kind);
        cf.iter()
            .enumerate()
            .map(|(g, cf_g)| {
                let (base, m) = sr_sum(kind, cf_g, y, hard_threshold);
                let mut aug = 0.0;
                let mut members = 0;
                for i in 0..y.len() {
                    if y[i] == want && index.assignment()[i] == g {
                        let resid = error_of(kind, to_scale(observed[i], hard_threshold))
                            - error_of(kind, to_scale(cf_g[i], hard_threshold));
                        aug += resid / propensity.own[i];
                        members += 1;
                    }
                }
                if members == 0 {
                    if m > 0.0 {
                        fallbacks.push(format!("{}: {}", index.label(g), kind.name()));
                    }
                    return WeightedRate::from_sums(base, m);
                }
                let mut w = WeightedRate::from_sums(base + aug, m);
                if let Some(r) = w.rate {
                    if !(0.0..=1.0).contains(&r) {
                        clip_events += 1;
                        w.rate = Some(r.clamp(0.0, 1.0));
                    }
                }
                w
            })
            .collect()
    };
    let cfpr = per_kind(ErrorKind::Cfpr);
    let cfnr = per_kind(ErrorKind::Cfnr);
    Ok(DrRates {
        rates: CFErrorRates::new(index, &cfpr, &cfnr),
        sr,
        clip_events,
        fallbacks,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneralConfig {
    pub protected: ProtectedSpec,
    pub min_group_n: usize,
    pub seed: u64,
    pub fit: FitSettings,
    pub mode: EstimationMode,
    pub scale: ScoreScale,
    /// Threshold for the hard scale.
    pub threshold: ThresholdPolicy,
    /// Audit the dataset's score column: the outcome model then imitates the
    /// scores instead of predicting the outcome.
    pub use_external_score: bool,
    pub resampling: ResamplingSettings,
    pub variance: VarianceOver,
}

impl GeneralConfig {
    pub fn new(protected: ProtectedSpec) -> Self {
        GeneralConfig {
            protected,
            min_group_n: DEFAULT_MIN_GROUP_N,
            seed: 0,
            fit: FitSettings::default(),
            mode: EstimationMode::Sr,
            scale: ScoreScale::Soft,
            threshold: ThresholdPolicy::default(),
            use_external_score: false,
            resampling: ResamplingSettings::default(),
            variance: VarianceOver::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneralMetadata {
    pub mode: EstimationMode,
    pub scale: ScoreScale,
    pub threshold: Option<f64>,
    pub score_source: ScoreSource,
    pub n: usize,
    /// Estimated group effects (logits relative to the first group).
    pub group_effects: Vec<(String, f64)>,
    pub clip_events: usize,
    pub fallbacks: Vec<String>,
    pub removed_groups: Vec<RemovedGroup>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneralAudit {
    pub rates: CFErrorRates,
    /// SR rates alongside DR ones (DR mode only).
    pub sr_rates: Option<CFErrorRates>,
    pub aggregates: ErrorAggregates,
    pub observed: StatMap,
    pub u_values: UValueTable,
    pub null: NullDistribution,
    pub bootstrap: Option<BootstrapResult>,
    pub metadata: GeneralMetadata,
}

struct Inputs<'a> {
    x: &'a DMatrix<f64>,
    y: &'a [u8],
    /// What the outcome model is fit to.
    target: &'a [f64],
    /// Row-attached external scores, if audited.
    external: Option<&'a [f64]>,
}

struct Estimate {
    model: OutcomeModel,
    rates: CFErrorRates,
    dr: Option<DrRates>,
}

fn estimate(inp: &Inputs, index: &GroupIndex, cfg: &GeneralConfig, t: Option<f64>) -> Result<Estimate> {
    let model = OutcomeModel::fit(inp.x, inp.target, index, &cfg.fit)?;
    match cfg.mode {
        EstimationMode::Sr => Ok(Estimate {
            rates: sr_counterfactual_rates(&model, inp.x, inp.y, index, t)?,
            model,
            dr: None,
        }),
        EstimationMode::Dr => {
            let observed = match inp.external {
                Some(s) => s.to_vec(),
                None => model.observed_scores(inp.x, index)?,
            };
            let prop = fit_group_propensity(inp.x, inp.y, index, &cfg.fit)?;
            let dr = dr_counterfactual_rates(&model, &prop, inp.x, inp.y, &observed, index, t)?;
            Ok(Estimate {
                rates: dr.rates.clone(),
                model,
                dr: Some(dr),
            })
        }
    }
}

/// Observed SR or DR rates and aggregates, a group-permutation null with the
/// outcome model refit per permutation, u-values, and optional bootstrap.
pub fn run_component3(dataset: &Dataset, cfg: &GeneralConfig) -> Result<GeneralAudit> {
    cfg.fit.validate()?;
    cfg.threshold.validate()?;
    cfg.resampling.validate()?;
    let (data, index, removed) = scored_cohort(dataset, &cfg.protected, cfg.min_group_n)?;
    if index.n_groups() < 2 {
        return Err(AuditError::data(format!(
            "the group-intervention audit needs at least 2 groups, found {}",
            index.n_groups()
        )));
    }
    let x = data.features();
    let y = data.outcome();

    let (external, source) = if cfg.use_external_score {
        let s = data
            .score()
            .ok_or_else(|| AuditError::config("external scores requested but no score column is present"))?;
        (Some(s), ScoreSource::External)
    } else {
        (None, ScoreSource::Model)
    };

    // Hard-scale threshold, resolved once on the observed scores.
    let y_f = data.outcome_f64();
    let threshold = match (cfg.scale, external) {
        (ScoreScale::Soft, _) => None,
        (ScoreScale::Hard, Some(s)) => Some(cfg.threshold.resolve(s, y)?),
        (ScoreScale::Hard, None) => {
            let m = OutcomeModel::fit(x, &y_f, &index, &cfg.fit)?;
            Some(cfg.threshold.resolve(&m.observed_scores(x, &index)?, y)?)
        }
    };
    let target: Vec<f64> = match (external, threshold) {
        (Some(s), Some(t)) => s.iter().map(|&v| to_scale(v, Some(t))).collect(),
        (Some(s), None) => s.to_vec(),
        (None, _) => y_f,
    };
    let inp = Inputs {
        x,
        y,
        target: &target,
        external,
    };

    let est = estimate(&inp, &index, cfg, threshold)?;
    let observed = statistics(&est.rates, cfg.variance, false);

    let null = run_permutations(cfg.resampling.n_permutations, cfg.seed, "general.perm", |seed, _| {
        let permuted = permute_groups(&index, seed);
        Ok(statistics(&estimate(&inp, &permuted, cfg, threshold)?.rates, cfg.variance, false))
    })?;
    let u_values = UValueTable::build(&observed, &null, cfg.resampling.alpha, cfg.resampling.unfairness_threshold)?;

    let bootstrap = if cfg.resampling.n_bootstrap > 0 {
        Some(run_bootstrap(
            cfg.resampling.n_bootstrap,
            cfg.seed,
            "general.boot",
            cfg.resampling.alpha,
            |seed, _| {
                let rows = bootstrap_indices(data.n(), seed);
                let xb = x.select_rows(rows.iter());
                let yb: Vec<u8> = rows.iter().map(|&i| y[i]).collect();
                let tb: Vec<f64> = rows.iter().map(|&i| target[i]).collect();
                let eb: Option<Vec<f64>> = external.map(|s| rows.iter().map(|&i| s[i]).collect());
                let sub = Inputs {
                    x: &xb,
                    y: &yb,
                    target: &tb,
                    external: eb.as_deref(),
                };
                // A resample whose fit fails contributes nothing.
                Ok(estimate(&sub, &index.take(&rows), cfg, threshold)
                    .map(|e| statistics(&e.rates, cfg.variance, false))
                    .unwrap_or_default())
            },
        )?)
    } else {
        None
    };

    let metadata = GeneralMetadata {
        mode: cfg.mode,
        scale: cfg.scale,
        threshold,
        score_source: source,
        n: data.n(),
        group_effects: index.labels().iter().cloned().zip(est.model.group_effects()).collect(),
        clip_events: est.dr.as_ref().map_or(0, |d| d.clip_events),
        fallbacks: est.dr.as_ref().map(|d| d.fallbacks.clone()).unwrap_or_default(),
        removed_groups: removed,
    };
    Ok(GeneralAudit {
        aggregates: aggregate_unfairness(&est.rates, cfg.variance).unwrap_or(ErrorAggregates {
            cfpr: None,
            cfnr: None,
        }),
        sr_rates: est.dr.map(|d| d.sr),
        rates: est.rates,
        observed,
        u_values,
        null,
        bootstrap,
        metadata,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::counterfactual::max_statistic_u;
    use crate::estimators::logit;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn model(coefficients: Vec<f64>, n_groups: usize) -> OutcomeModel {
        OutcomeModel {
            model: LogisticModel {
                coefficients,
                converged: true,
                iterations: 0,
                final_gradient_norm: 0.0,
            },
            n_groups,
        }
    }

    fn index(groups: &[usize], k: usize) -> GroupIndex {
        GroupIndex::from_assignment(groups.to_vec(), (0..k).map(|g| format!("g{g}")).collect()).unwrap()
    }

    #[test]
    fn intercept_only_model() {
        let m = model(vec![logit(0.3), 0.0, 0.0, 0.0], 3);
        let x = DMatrix::from_column_slice(6, 1, &[0.1, -1.0, 2.0, 0.5, 0.0, 3.0]);
        let y = [0, 1, 0, 1, 0, 0];
        let r = sr_counterfactual_rates(&m, &x, &y, &index(&[0, 1, 2, 0, 1, 2], 3), None).unwrap();
        for g in &r.groups {
            assert!((g.cfpr.unwrap() - 0.3).abs() < 1e-12);
            assert!((g.cfnr.unwrap() - 0.7).abs() < 1e-12);
        }
    }

    #[test]
    fn group_blind_model_is_exactly_fair() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = DMatrix::from_fn(200, 3, |_, _| rng.random_range(-2.0..2.0));
        let y: Vec<u8> = (0..200).map(|_| rng.random_range(0..2)).collect();
        let groups: Vec<usize> = (0..200).map(|_| rng.random_range(0..4)).collect();
        let base = LogisticModel {
            coefficients: vec![-0.2, 0.7, -1.1, 0.4],
            converged: true,
            iterations: 0,
            final_gradient_norm: 0.0,
        };
        let blind = OutcomeModel::group_blind(&base, 4);
        let r = sr_counterfactual_rates(&blind, &x, &y, &index(&groups, 4), None).unwrap();
        let stats = statistics(&r, VarianceOver::default(), true);
        assert!(stats.values().all(|v| *v == Some(0.0)), "{stats:?}");
    }

    /// Ten rows, two groups, one covariate, coefficients fixed by hand.
    #[test]
    fn ten_row_standardization() {
        let (b0, b1, gamma) = (-0.4, 0.9, 1.3);
        let m = model(vec![b0, b1, gamma], 2);
        let xs = [-1.2, 0.3, 0.8, -0.5, 1.9, 0.0, -2.0, 0.6, 1.1, -0.3];
        let y = [0, 0, 1, 0, 1, 1, 0, 1, 0, 1];
        let groups = [0, 1, 0, 1, 0, 1, 1, 0, 1, 0];
        let x = DMatrix::from_column_slice(10, 1, &xs);
        let r = sr_counterfactual_rates(&m, &x, &y, &index(&groups, 2), None).unwrap();
        for (g, shift) in [(0usize, 0.0), (1, gamma)] {
            let s = |v: f64| 1.0 / (1.0 + (-(b0 + b1 * v + shift)).exp());
            let neg: Vec<f64> = (0..10).filter(|&i| y[i] == 0).map(|i| s(xs[i])).collect();
            let pos: Vec<f64> = (0..10).filter(|&i| y[i] == 1).map(|i| 1.0 - s(xs[i])).collect();
            let fpr = neg.iter().sum::<f64>() / neg.len() as f64;
            let fnr = pos.iter().sum::<f64>() / pos.len() as f64;
            assert!((r.groups[g].cfpr.unwrap() - fpr).abs() < 1e-12);
            assert!((r.groups[g].cfnr.unwrap() - fnr).abs() < 1e-12);
        }
    }

    #[test]
    fn hard_scale_counts_labels() {
        let m = model(vec![0.0, 1.0, 0.0], 2);
        let x = DMatrix::from_column_slice(4, 1, &[-1.0, 1.0, 2.0, -3.0]);
        let r = sr_counterfactual_rates(&m, &x, &[0, 0, 1, 1], &index(&[0, 1, 0, 1], 2), Some(0.5)).unwrap();
        assert_eq!(r.groups[0].cfpr, Some(0.5));
        assert_eq!(r.groups[0].cfnr, Some(0.5));
    }

    struct World {
        x: DMatrix<f64>,
        y: Vec<u8>,
        groups: Vec<usize>,
        observed: Vec<f64>,
        truth: OutcomeModel,
    }

    /// Group independent of covariates and outcome, three groups, so the
    /// exact stratum propensity is 1/3 everywhere. The audited score depends
    /// on group.
    fn world(n: usize, seed: u64) -> World {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = DMatrix::from_fn(n, 1, |_, _| StandardNormal.sample(&mut rng));
        let y: Vec<u8> = (0..n).map(|i| u8::from(rng.random::<f64>() < sigmoid(x[(i, 0)]))).collect();
        let groups: Vec<usize> = (0..n).map(|_| rng.random_range(0..3)).collect();
        let truth = model(vec![0.5, 1.2, 0.8, -0.5], 3);
        let observed = truth.observed_scores(&x, &index(&groups, 3)).unwrap();
        World {
            x,
            y,
            groups,
            observed,
            truth,
        }
    }

    #[test]
    fn dr_without_augmentation_is_sr() {
        let w = world(500, 1);
        let idx = index(&w.groups, 3);
        let corrupt = model(vec![0.0, 0.5, 0.3, -0.2], 3);
        let prop = GroupPropensity {
            own: vec![1.0 / 3.0; 500],
            clamp: PROPENSITY_CLAMP,
        };
        let dr = dr_counterfactual_rates(&corrupt, &prop, &w.x, &w.y, &w.observed, &idx, None).unwrap();
        let sr = sr_counterfactual_rates(&corrupt, &w.x, &w.y, &idx, None).unwrap();
        assert_eq!(dr.sr, sr);
        // Exact outcome model: every residual is zero, so DR is SR.
        let dr = dr_counterfactual_rates(&w.truth, &prop, &w.x, &w.y, &w.observed, &idx, None).unwrap();
        assert_eq!(dr.rates, dr.sr);
    }

    #[test]
    fn dr_repairs_a_wrong_outcome_model() {
        let w = world(5000, 7);
        let idx = index(&w.groups, 3);
        let oracle = sr_counterfactual_rates(&w.truth, &w.x, &w.y, &idx, None).unwrap();
        let corrupt = model(vec![0.0, 0.5, 0.3, -0.2], 3);
        let prop = GroupPropensity {
            own: vec![1.0 / 3.0; 5000],
            clamp: PROPENSITY_CLAMP,
        };
        let dr = dr_counterfactual_rates(&corrupt, &prop, &w.x, &w.y, &w.observed, &idx, None).unwrap();
        let err = |r: &CFErrorRates| -> f64 {
            r.groups
                .iter()
                .zip(&oracle.groups)
                .map(|(a, b)| (a.cfpr.unwrap() - b.cfpr.unwrap()).abs() + (a.cfnr.unwrap() - b.cfnr.unwrap()).abs())
                .sum()
        };
        assert!(err(&dr.rates) < err(&dr.sr) / 3.0, "dr {} sr {}", err(&dr.rates), err(&dr.sr));
    }

    #[test]
    fn fitted_propensity_tracks_group_frequencies() {
        let w = world(3000, 3);
        let idx = index(&w.groups, 3);
        let prop = fit_group_propensity(&w.x, &w.y, &idx, &FitSettings::default()).unwrap();
        let mean = prop.own.iter().sum::<f64>() / 3000.0;
        assert!((mean - 1.0 / 3.0).abs() < 0.02, "{mean}");
    }

    #[test]
    fn absent_group_falls_back_to_sr() {
        let x = DMatrix::from_column_slice(6, 1, &[0.1, 0.2, 0.3, 0.4, 0.5, 0.6]);
        let y = [0, 0, 0, 1, 1, 1];
        // Group 1 never has Y = 1.
        let idx = index(&[0, 1, 0, 0, 0, 1], 2);
        let idx_fixed = index(&[0, 1, 0, 0, 0, 0], 2);
        let m = model(vec![0.0, 1.0, 0.5], 2);
        let prop = GroupPropensity {
            own: vec![0.5; 6],
            clamp: PROPENSITY_CLAMP,
        };
        let obs = [0.2; 6];
        let dr = dr_counterfactual_rates(&m, &prop, &x, &y, &obs, &idx_fixed, None).unwrap();
        assert_eq!(dr.fallbacks, vec!["g1: cfnr".to_string()]);
        assert_eq!(dr.rates.groups[1].cfnr, dr.sr.groups[1].cfnr);
        assert!(dr_counterfactual_rates(&m, &prop, &x, &y, &obs, &idx, None).unwrap().fallbacks.is_empty());
    }

    #[test]
    fn dr_clips_and_counts() {
        let x = DMatrix::from_column_slice(4, 1, &[0.0; 4]);
        let m = model(vec![logit(0.9), 0.0, 0.0], 2);
        let prop = GroupPropensity {
            own: vec![0.01; 4],
            clamp: PROPENSITY_CLAMP,
        };
        // Observed scores far below the model: a huge negative correction.
        let dr = dr_counterfactual_rates(&m, &prop, &x, &[0, 0, 1, 1], &[0.0; 4], &index(&[0, 1, 0, 1], 2), None).unwrap();
        assert_eq!(dr.rates.groups[0].cfpr, Some(0.0));
        assert!(dr.clip_events >= 2);
    }

    fn audit_data(n: usize, seed: u64, shift: f64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = DMatrix::from_fn(n, 2, |_, _| StandardNormal.sample(&mut rng));
        let a: Vec<String> = (0..n).map(|_| ["p", "q"][rng.random_range(0..2)].to_string()).collect();
        let b: Vec<String> = (0..n).map(|_| ["u", "v"][rng.random_range(0..2)].to_string()).collect();
        let y: Vec<u8> = (0..n)
            .map(|i| {
                let bias = if a[i] == "p" && b[i] == "u" { shift } else { 0.0 };
                u8::from(rng.random::<f64>() < sigmoid(-1.0 + x[(i, 0)] - 0.5 * x[(i, 1)] + bias))
            })
            .collect();
        Dataset::new(x, vec!["x1".into(), "x2".into()], y)
            .unwrap()
            .with_protected("a", a)
            .unwrap()
            .with_protected("b", b)
            .unwrap()
    }

    fn cfg(perms: usize, mode: EstimationMode) -> GeneralConfig {
        let mut c = GeneralConfig::new(ProtectedSpec::new(["a", "b"]));
        c.resampling.n_permutations = perms;
        c.resampling.n_bootstrap = 0;
        c.mode = mode;
        c.seed = 11;
        c
    }

    #[test]
    fn no_bias_small_u_values() {
        let a = run_component3(&audit_data(3000, 1, 0.0), &cfg(60, EstimationMode::Sr)).unwrap();
        assert_eq!(a.u_values.rows.len(), 6);
        for r in &a.u_values.rows {
            assert!(r.u_value <= 0.02, "{r:?}");
            assert_eq!(r.flagged, r.u_value > 0.1);
        }
    }

    #[test]
    fn injected_bias_is_detected() {
        let a = run_component3(&audit_data(3000, 2, 2.0), &cfg(60, EstimationMode::Sr)).unwrap();
        assert!(max_statistic_u(&a.u_values).unwrap() > 0.1);
        let top = a.metadata.group_effects.iter().find(|g| g.0 == "p | u").unwrap();
        assert_eq!(top.1, 0.0);
        assert!(a.metadata.group_effects.iter().skip(1).all(|g| g.1 < -1.0));
    }

    #[test]
    fn dr_and_bootstrap_run() {
        let mut c = cfg(20, EstimationMode::Dr);
        c.resampling.n_bootstrap = 20;
        c.scale = ScoreScale::Hard;
        c.threshold = ThresholdPolicy::Youden;
        let a = run_component3(&audit_data(1500, 3, 1.0), &c).unwrap();
        assert!(a.sr_rates.is_some());
        assert!(a.metadata.threshold.is_some());
        assert!(a.bootstrap.unwrap().intervals.contains_key("cfnr.maximum"));
    }

    #[test]
    fn external_scores_soft_target() {
        let d = audit_data(2000, 4, 0.0);
        let s: Vec<f64> = (0..d.n())
            .map(|i| sigmoid(0.3 * d.features()[(i, 0)] + if d.protected()[0].values[i] == "p" { 0.5 } else { 0.0 }))
            .collect();
        let d = d.with_score(s).unwrap();
        let mut c = cfg(20, EstimationMode::Dr);
        c.use_external_score = true;
        let a = run_component3(&d, &c).unwrap();
        let sr = a.sr_rates.as_ref().unwrap();
        for (dr, sr) in a.rates.groups.iter().zip(&sr.groups) {
            assert!((dr.cfpr.unwrap() - sr.cfpr.unwrap()).abs() < 0.02);
        }
        // The score's dependence on attribute a shows up as a group effect.
        assert!(a.aggregates.cfpr.unwrap().maximum > 0.05);
    }
}
