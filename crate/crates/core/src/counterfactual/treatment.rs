//! Error rates against the untreated potential outcome when a binary
//! treatment sits between prediction and outcome.
//!
//! cFPR(a) = E[S (1-Y)(1-D)] / E[(1-Y)(1-D)] and cFNR(a) = E[(1-S) Y0] / E[Y0],
//! the latter identified from untreated rows weighted by `1 / (1 - pi(x))`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{
    aggregate_unfairness, pairwise_disparities, statistics, CFErrorRates, ErrorAggregates,
    GroupErrorRates, PairwiseDisparity, VarianceOver, WeightedRate, PROPENSITY_CLAMP,
};
use crate::data::{build_intersections, filter_min_group, Dataset, GroupIndex, ProtectedSpec, RemovedGroup, DEFAULT_MIN_GROUP_N};
use crate::error::{AuditError, Result};
use crate::estimators::{
    apply_threshold, fit_logistic, with_group_indicators, FitSettings, LogisticModel, ThresholdPolicy,
};
use crate::observational::ScoreSource;
use crate::resampling::{
    bootstrap_indices, permute_groups, run_bootstrap, run_permutations, BootstrapResult,
    NullDistribution, ResamplingSettings, StatMap, UValueTable,
};

/// Treatment propensity and untreated-outcome regression.
#[derive(Debug, Clone, PartialEq)]
pub struct NuisanceEstimates {
    /// `P(D = 1 | x)` per row, clamped to `[clamp, 1 - clamp]`.
    pub pi_hat: Vec<f64>,
    pub propensity_model: LogisticModel,
    /// `E[Y | x, D = 0]`, fit on untreated rows weighted by `1 / (1 - pi_hat)`.
    pub y0_model: LogisticModel,
    pub clamp: f64,
}

impl NuisanceEstimates {
    /// Rows whose propensity hit either clamp bound.
    pub fn n_clamped(&self) -> usize {
        self.pi_hat
            .iter()
            .filter(|&&p| p <= self.clamp || p >= 1.0 - self.clamp)
            .count()
    }
}

/// Nuisance models on the dataset's covariates.
pub fn estimate_nuisance(train: &Dataset, settings: &FitSettings) -> Result<NuisanceEstimates> {
    let d = train
        .treatment()
        .ok_or_else(|| AuditError::config("no treatment column in the data"))?;
    estimate_nuisance_on(train.features(), train.outcome(), d, settings)
}

/// Nuisance models on an explicit design matrix.
pub fn estimate_nuisance_on(
    x: &DMatrix<f64>,
    y: &[u8],
    d: &[u8],
    settings: &FitSettings,
) -> Result<NuisanceEstimates> {
    let treated = d.iter().filter(|&&v| v == 1).count();
    if treated == 0 || treated == d.len() {
        return Err(AuditError::data(format!(
            "treatment has a single arm ({treated} of {} rows treated); both arms are needed",
            d.len()
        )));
    }
    let d_f: Vec<f64> = d.iter().map(|&v| f64::from(v)).collect();
    let propensity_model = fit_logistic(x, &d_f, None, settings)?;
    let pi_hat: Vec<f64> = propensity_model
        .predict_proba(x)?
        .into_iter()
        .map(|p| p.clamp(PROPENSITY_CLAMP, 1.0 - PROPENSITY_CLAMP))
        .collect();

    let untreated: Vec<usize> = (0..d.len()).filter(|&i| d[i] == 0).collect();
    let xu = x.select_rows(untreated.iter());
    let yu: Vec<f64> = untreated.iter().map(|&i| f64::from(y[i])).collect();
    let wu: Vec<f64> = untreated.iter().map(|&i| 1.0 / (1.0 - pi_hat[i])).collect();
    let y0_model = fit_logistic(&xu, &yu, Some(&wu), settings)?;
    Ok(NuisanceEstimates {
        pi_hat,
        propensity_model,
        y0_model,
        clamp: PROPENSITY_CLAMP,
    })
}

fn check_lengths(index: &GroupIndex, columns: &[usize]) -> Result<()> {
    if columns.iter().any(|&l| l != index.n_rows()) {
        return Err(AuditError::data(format!(
            "column lengths {columns:?} do not match {} group rows",
            index.n_rows()
        )));
    }
    Ok(())
}

/// Per-group `sum S(1-Y)(1-D) / sum (1-Y)(1-D)`.
pub fn cfpr_by_group(s: &[u8], y: &[u8], d: &[u8], index: &GroupIndex) -> Result<Vec<WeightedRate>> {
    check_lengths(index, &[s.len(), y.len(), d.len()])?;
    let k = index.n_groups();
    let (mut num, mut den) = (vec![0.0; k], vec![0.0; k]);
    for (i, &g) in index.assignment().iter().enumerate() {
        let base = f64::from(1 - y[i]) * f64::from(1 - d[i]);
        num[g] += f64::from(s[i]) * base;
        den[g] += base;
    }
    Ok(num.iter().zip(&den).map(|(&n, &d)| WeightedRate::from_sums(n, d)).collect())
}

/// Per-group inverse-probability-weighted
/// `sum (1-S) Y (1-D) / (1-pi) / sum Y (1-D) / (1-pi)`.
pub fn cfnr_by_group(
    s: &[u8],
    y: &[u8],
    d: &[u8],
    pi_hat: &[f64],
    index: &GroupIndex,
) -> Result<Vec<WeightedRate>> {
    check_lengths(index, &[s.len(), y.len(), d.len(), pi_hat.len()])?;
    let k = index.n_groups();
    let (mut num, mut den) = (vec![0.0; k], vec![0.0; k]);
    for (i, &g) in index.assignment().iter().enumerate() {
        let w = f64::from(y[i]) * f64::from(1 - d[i]) / (1.0 - pi_hat[i]);
        num[g] += f64::from(1 - s[i]) * w;
        den[g] += w;
    }
    Ok(num.iter().zip(&den).map(|(&n, &d)| WeightedRate::from_sums(n, d)).collect())
}

/// Rates with every row in one group.
pub fn pooled_rates(s: &[u8], y: &[u8], d: &[u8], pi_hat: &[f64]) -> Result<GroupErrorRates> {
    let all = GroupIndex::from_assignment(vec![0; s.len()], vec!["all".to_string()])?;
    let p = cfpr_by_group(s, y, d, &all)?[0];
    let n = cfnr_by_group(s, y, d, pi_hat, &all)?[0];
    Ok(GroupErrorRates {
        label: "all".to_string(),
        cfpr: p.rate,
        cfnr: n.rate,
        cfpr_weight: p.weight,
        cfnr_weight: n.weight,
    })
}

fn shrink(rate: Option<f64>, w: f64, min_eff: f64, pooled: Option<f64>) -> Option<f64> {
    match pooled {
        Some(p) if w < min_eff => Some((w * rate.unwrap_or(0.0) + (min_eff - w) * p) / min_eff),
        _ => rate,
    }
}

/// Shrinks each group whose denominator weight is below `min_eff` toward the
/// pooled rate: `(w rate + (min_eff - w) pooled) / min_eff`.
pub fn data_borrow(rates: &CFErrorRates, min_eff: f64, pooled: &GroupErrorRates) -> CFErrorRates {
    CFErrorRates {
        groups: rates
            .groups
            .iter()
            .map(|g| GroupErrorRates {
                cfpr: shrink(g.cfpr, g.cfpr_weight, min_eff, pooled.cfpr),
                cfnr: shrink(g.cfnr, g.cfnr_weight, min_eff, pooled.cfnr),
                ..g.clone()
            })
            .collect(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TreatmentConfig {
    pub protected: ProtectedSpec,
    pub min_group_n: usize,
    pub seed: u64,
    pub fit: FitSettings,
    pub threshold: ThresholdPolicy,
    pub use_external_score: bool,
    /// Add group indicators to the built-in score model.
    pub group_features: bool,
    pub resampling: ResamplingSettings,
    /// Data-borrowing strength; 0 disables it.
    pub min_eff: f64,
    pub variance: VarianceOver,
}

impl TreatmentConfig {
    pub fn new(protected: ProtectedSpec) -> Self {
        TreatmentConfig {
            protected,
            min_group_n: DEFAULT_MIN_GROUP_N,
            seed: 0,
            fit: FitSettings::default(),
            threshold: ThresholdPolicy::default(),
            use_external_score: false,
            group_features: false,
            resampling: ResamplingSettings::default(),
            min_eff: 0.0,
            variance: VarianceOver::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreatmentMetadata {
    pub threshold: f64,
    pub score_source: ScoreSource,
    pub n: usize,
    pub n_treated: usize,
    pub mean_propensity: f64,
    pub n_propensity_clamped: usize,
    pub y0_coefficients: Vec<f64>,
    /// Groups whose rates were shrunk toward the pooled rate.
    pub borrowed: Vec<String>,
    pub removed_groups: Vec<RemovedGroup>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TreatmentAudit {
    pub rates: CFErrorRates,
    pub pairwise: Vec<PairwiseDisparity>,
    pub aggregates: ErrorAggregates,
    pub observed: StatMap,
    pub u_values: UValueTable,
    pub null: NullDistribution,
    pub bootstrap: Option<BootstrapResult>,
    pub metadata: TreatmentMetadata,
}

struct Inputs<'a> {
    x: &'a DMatrix<f64>,
    y: &'a [u8],
    d: &'a [u8],
    s: &'a [u8],
}

/// Nuisance fit with group indicators, rates, then optional borrowing.
fn rates_for(inp: &Inputs, index: &GroupIndex, cfg: &TreatmentConfig) -> Result<(CFErrorRates, NuisanceEstimates)> {
    let design = with_group_indicators(inp.x, index.assignment(), index.n_groups());
    let nuisance = estimate_nuisance_on(&design, inp.y, inp.d, &cfg.fit)?;
    let cfpr = cfpr_by_group(inp.s, inp.y, inp.d, index)?;
    let cfnr = cfnr_by_group(inp.s, inp.y, inp.d, &nuisance.pi_hat, index)?;
    let mut rates = CFErrorRates::new(index, &cfpr, &cfnr);
    if cfg.min_eff > 0.0 {
        let pooled = pooled_rates(inp.s, inp.y, inp.d, &nuisance.pi_hat)?;
        rates = data_borrow(&rates, cfg.min_eff, &pooled);
    }
    Ok((rates, nuisance))
}

/// Thresholded predictions for the cohort: external scores, or a logistic
/// model of `Y` fit on the whole cohort.
fn cohort_scores(
    data: &Dataset,
    index: &GroupIndex,
    fit: &FitSettings,
    use_external: bool,
    group_features: bool,
) -> Result<(Vec<f64>, ScoreSource)> {
    if use_external {
        let s = data
            .score()
            .ok_or_else(|| AuditError::config("external scores requested but no score column is present"))?;
        return Ok((s.to_vec(), ScoreSource::External));
    }
    let x = if group_features {
        with_group_indicators(data.features(), index.assignment(), index.n_groups())
    } else {
        data.features().clone()
    };
    let model = fit_logistic(&x, &data.outcome_f64(), None, fit)?;
    Ok((model.predict_proba(&x)?, ScoreSource::Model))
}

pub(crate) fn scored_cohort(
    dataset: &Dataset,
    protected: &ProtectedSpec,
    min_group_n: usize,
) -> Result<(Dataset, GroupIndex, Vec<RemovedGroup>)> {
    let index = build_intersections(dataset, protected)?;
    let filtered = filter_min_group(dataset, &index, min_group_n)?;
    Ok((filtered.dataset, filtered.index, filtered.removed))
}

/// Observed rates and disparities, a group-permutation null with nuisance
/// models refit per permutation, u-values, and optional bootstrap intervals.
pub fn run_component2(dataset: &Dataset, cfg: &TreatmentConfig) -> Result<TreatmentAudit> {
    cfg.fit.validate()?;
    cfg.threshold.validate()?;
    cfg.resampling.validate()?;
    if !(cfg.min_eff >= 0.0 && cfg.min_eff.is_finite()) {
        return Err(AuditError::config(format!("min_eff must be a non-negative number, got {}", cfg.min_eff)));
    }
    if dataset.treatment().is_none() {
        return Err(AuditError::config("the treatment audit needs a treatment column"));
    }
    let (data, index, removed) = scored_cohort(dataset, &cfg.protected, cfg.min_group_n)?;
    let (scores, source) = cohort_scores(&data, &index, &cfg.fit, cfg.use_external_score, cfg.group_features)?;
    let threshold = cfg.threshold.resolve(&scores, data.outcome())?;
    let s = apply_threshold(&scores, threshold);
    let d = data.treatment().expect("checked above");
    let inp = Inputs {
        x: data.features(),
        y: data.outcome(),
        d,
        s: &s,
    };

    let (rates, nuisance) = rates_for(&inp, &index, cfg)?;
    let observed = statistics(&rates, cfg.variance, true);

    let null = run_permutations(cfg.resampling.n_permutations, cfg.seed, "treatment.perm", |seed, _| {
        let permuted = permute_groups(&index, seed);
        let (r, _) = rates_for(&inp, &permuted, cfg)?;
        Ok(statistics(&r, cfg.variance, true))
    })?;
    let u_values = UValueTable::build(&observed, &null, cfg.resampling.alpha, cfg.resampling.unfairness_threshold)?;

    let bootstrap = if cfg.resampling.n_bootstrap > 0 {
        Some(run_bootstrap(
            cfg.resampling.n_bootstrap,
            cfg.seed,
            "treatment.boot",
            cfg.resampling.alpha,
            |seed, _| {
                let rows = bootstrap_indices(data.n(), seed);
                let x = inp.x.select_rows(rows.iter());
                let pick = |v: &[u8]| rows.iter().map(|&i| v[i]).collect::<Vec<u8>>();
                let (y, d, s) = (pick(inp.y), pick(inp.d), pick(inp.s));
                let sub = Inputs { x: &x, y: &y, d: &d, s: &s };
                // A resample that loses a treatment arm contributes nothing.
                Ok(rates_for(&sub, &index.take(&rows), cfg)
                    .map(|(r, _)| statistics(&r, cfg.variance, true))
                    .unwrap_or_default())
            },
        )?)
    } else {
        None
    };

    let borrowed = rates
        .groups
        .iter()
        .filter(|g| cfg.min_eff > 0.0 && (g.cfpr_weight < cfg.min_eff || g.cfnr_weight < cfg.min_eff))
        .map(|g| g.label.clone())
        .collect();
    let metadata = TreatmentMetadata {
        threshold,
        score_source: source,
        n: data.n(),
        n_treated: d.iter().filter(|&&v| v == 1).count(),
        mean_propensity: nuisance.pi_hat.iter().sum::<f64>() / data.n() as f64,
        n_propensity_clamped: nuisance.n_clamped(),
        y0_coefficients: nuisance.y0_model.coefficients.clone(),
        borrowed,
        removed_groups: removed,
    };
    Ok(TreatmentAudit {
        pairwise: pairwise_disparities(&rates),
        aggregates: aggregate_unfairness(&rates, cfg.variance).unwrap_or(ErrorAggregates {
            cfpr: None,
            cfnr: None,
        }),
        rates,
        observed,
        u_values,
        null,
        bootstrap,
        metadata,
    })
}
