//! Observational group fairness on a held-out test split: per-group confusion
//! matrices, demographic parity, equalized odds, equal opportunity, accuracy
//! and AUROC, for each protected attribute alone and for their intersection.

use serde::{Deserialize, Serialize};

use crate::data::{
    build_intersections, filter_min_group, stratified_split, Dataset, GroupIndex, ProtectedSpec,
    RemovedGroup, DEFAULT_MIN_GROUP_N,
};
use crate::error::{AuditError, Result};
use crate::estimators::{
    apply_imbalance, apply_threshold, fit_logistic, with_group_indicators, FitSettings,
    ImbalanceMode, ImbalancePolicy, LogisticModel, ThresholdPolicy,
};
use crate::resampling::derive_seed;

pub const DEFAULT_TEST_FRACTION: f64 = 0.2;

/// Confusion counts and derived rates for one group. A rate is `None` when
/// its denominator is zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupConfusion {
    pub label: String,
    pub n: usize,
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tpr: Option<f64>,
    pub fpr: Option<f64>,
    pub selection_rate: Option<f64>,
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

impl GroupConfusion {
    fn from_counts(label: String, tp: usize, fp: usize, tn: usize, fn_: usize) -> Self {
        let n = tp + fp + tn + fn_;
        GroupConfusion {
            label,
            n,
            tp,
            fp,
            tn,
            fn_,
            tpr: ratio(tp, tp + fn_),
            fpr: ratio(fp, fp + tn),
            selection_rate: ratio(tp + fp, n),
        }
    }
}

/// Per-group confusion matrices along one axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupRates {
    pub axis: String,
    pub groups: Vec<GroupConfusion>,
}

impl GroupRates {
    fn defined(&self, f: impl Fn(&GroupConfusion) -> Option<f64>) -> Vec<f64> {
        self.groups.iter().filter_map(f).collect()
    }

    /// `"<label>: <rate>"` for every rate left undefined.
    pub fn undefined(&self) -> Vec<String> {
        let mut out = Vec::new();
        for g in &self.groups {
            if g.selection_rate.is_none() {
                out.push(format!("{}: selection_rate", g.label));
            }
            if g.tpr.is_none() {
                out.push(format!("{}: tpr", g.label));
            }
            if g.fpr.is_none() {
                out.push(format!("{}: fpr", g.label));
            }
        }
        out
    }
}

fn spread(values: &[f64]) -> Option<f64> {
    let min = values.iter().copied().reduce(f64::min)?;
    let max = values.iter().copied().reduce(f64::max)?;
    Some(max - min)
}

pub fn confusion_by_group(labels: &[u8], y: &[u8], index: &GroupIndex) -> Result<GroupRates> {
    if labels.len() != y.len() || y.len() != index.n_rows() {
        return Err(AuditError::data(format!(
            "length mismatch: {} predictions, {} outcomes, {} group rows",
            labels.len(),
            y.len(),
            index.n_rows()
        )));
    }
    let k = index.n_groups();
    let mut cells = vec![[0usize; 4]; k];
    for ((&pred, &truth), &g) in labels.iter().zip(y).zip(index.assignment()) {
        let slot = match (pred == 1, truth == 1) {
            (true, true) => 0,
            (true, false) => 1,
            (false, false) => 2,
            (false, true) => 3,
        };
        cells[g][slot] += 1;
    }
    Ok(GroupRates {
        axis: index.axis_name(),
        groups: cells
            .iter()
            .enumerate()
            .map(|(g, c)| GroupConfusion::from_counts(index.label(g).to_string(), c[0], c[1], c[2], c[3]))
            .collect(),
    })
}

/// Max minus min selection rate over non-empty groups.
pub fn demographic_parity_gap(rates: &GroupRates) -> f64 {
    spread(&rates.defined(|g| g.selection_rate)).unwrap_or(0.0)
}

/// `(tpr_gap, fpr_gap)`, each max minus min over groups with a defined rate.
pub fn equalized_odds_gaps(rates: &GroupRates) -> Result<(f64, f64)> {
    let tpr = spread(&rates.defined(|g| g.tpr));
    let fpr = spread(&rates.defined(|g| g.fpr));
    match (tpr, fpr) {
        (Some(t), Some(f)) => Ok((t, f)),
        (None, _) => Err(AuditError::data(format!(
            "axis '{}': no group has a defined true positive rate",
            rates.axis
        ))),
        (_, None) => Err(AuditError::data(format!(
            "axis '{}': no group has a defined false positive rate",
            rates.axis
        ))),
    }
}

pub fn equal_opportunity_gap(rates: &GroupRates) -> Result<f64> {
    spread(&rates.defined(|g| g.tpr)).ok_or_else(|| {
        AuditError::data(format!(
            "axis '{}': no group has a defined true positive rate",
            rates.axis
        ))
    })
}

/// Mann-Whitney AUROC, ties between a positive and a negative count one half.
pub fn auroc(scores: &[f64], y: &[u8]) -> Result<f64> {
    if scores.len() != y.len() {
        return Err(AuditError::data("scores and labels differ in length"));
    }
    let pos = y.iter().filter(|&&v| v == 1).count();
    let neg = y.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(AuditError::data("AUROC needs both outcome classes"));
    }
    let mut pairs: Vec<(f64, u8)> = scores.iter().copied().zip(y.iter().copied()).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    // Twice the Mann-Whitney count, kept integral so the result is exact.
    let mut twice_wins: u128 = 0;
    let mut neg_below: u128 = 0;
    let mut i = 0;
    while i < pairs.len() {
        let v = pairs[i].0;
        let (mut bp, mut bn) = (0u128, 0u128);
        while i < pairs.len() && pairs[i].0 == v {
            if pairs[i].1 == 1 {
                bp += 1;
            } else {
                bn += 1;
            }
            i += 1;
        }
        twice_wins += 2 * bp * neg_below + bp * bn;
        neg_below += bn;
    }
    Ok(twice_wins as f64 / (2.0 * pos as f64 * neg as f64))
}

pub fn accuracy(labels: &[u8], y: &[u8]) -> f64 {
    let hits = labels.iter().zip(y).filter(|(a, b)| a == b).count();
    hits as f64 / y.len().max(1) as f64
}

/// Which rows an axis was evaluated on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Cohort {
    /// Test rows of the cohort left after small-group filtering.
    Filtered,
    /// Filtered test rows plus every row removed by filtering (never trained on).
    Unfiltered,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AxisMetrics {
    pub cohort: Cohort,
    pub rates: GroupRates,
    pub dp_gap: Option<f64>,
    pub eo_tpr_gap: Option<f64>,
    pub eo_fpr_gap: Option<f64>,
    pub eod_gap: Option<f64>,
    pub undefined: Vec<String>,
}

impl AxisMetrics {
    pub fn from_rates(cohort: Cohort, rates: GroupRates) -> Self {
        let tpr = spread(&rates.defined(|g| g.tpr));
        AxisMetrics {
            cohort,
            dp_gap: spread(&rates.defined(|g| g.selection_rate)),
            eo_tpr_gap: tpr,
            eo_fpr_gap: spread(&rates.defined(|g| g.fpr)),
            eod_gap: tpr,
            undefined: rates.undefined(),
            rates,
        }
    }

    pub fn axis(&self) -> &str {
        &self.rates.axis
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreSource {
    Model,
    External,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSummary {
    /// Parallel to `coefficients`; starts with "intercept".
    pub terms: Vec<String>,
    pub coefficients: Vec<f64>,
    pub iterations: usize,
    pub final_gradient_norm: f64,
}

impl ModelSummary {
    fn new(model: &LogisticModel, terms: Vec<String>) -> Self {
        ModelSummary {
            terms,
            coefficients: model.coefficients.clone(),
            iterations: model.iterations,
            final_gradient_norm: model.final_gradient_norm,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationalMetadata {
    pub seed: u64,
    pub threshold: f64,
    pub threshold_policy: ThresholdPolicy,
    pub score_source: ScoreSource,
    pub imbalance: ImbalanceMode,
    pub n_train: usize,
    pub n_test: usize,
    pub removed_groups: Vec<RemovedGroup>,
    pub model: Option<ModelSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FairnessReport {
    pub axes: Vec<AxisMetrics>,
    pub accuracy: f64,
    /// `None` when the test split holds a single outcome class.
    pub auroc: Option<f64>,
    pub metadata: ObservationalMetadata,
}

/// One row of the metric-by-axis gap table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapRow {
    pub metric: String,
    /// `(axis, gap)` in axis order: single attributes, then intersectional.
    pub values: Vec<(String, Option<f64>)>,
}

impl FairnessReport {
    pub fn axis(&self, name: &str, cohort: Cohort) -> Option<&AxisMetrics> {
        self.axes.iter().find(|a| a.axis() == name && a.cohort == cohort)
    }

    /// Demographic parity, equalized-odds FPR and equal opportunity gaps for
    /// every axis of the filtered cohort.
    pub fn gap_table(&self) -> Vec<GapRow> {
        let axes: Vec<&AxisMetrics> = self.axes.iter().filter(|a| a.cohort == Cohort::Filtered).collect();
        let row = |metric: &str, f: fn(&AxisMetrics) -> Option<f64>| GapRow {
            metric: metric.to_string(),
            values: axes.iter().map(|a| (a.axis().to_string(), f(a))).collect(),
        };
        vec![
            row("demographic_parity_gap", |a| a.dp_gap),
            row("equalized_odds_fpr_gap", |a| a.eo_fpr_gap),
            row("equal_opportunity_gap", |a| a.eod_gap),
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObservationalConfig {
    pub protected: ProtectedSpec,
    pub min_group_n: usize,
    pub test_fraction: f64,
    pub seed: u64,
    pub fit: FitSettings,
    pub imbalance: ImbalanceMode,
    pub threshold: ThresholdPolicy,
    /// Add group indicators to the built-in model's features.
    pub group_features: bool,
    /// Use the dataset's score column instead of fitting a model.
    pub use_external_score: bool,
}

impl ObservationalConfig {
    pub fn new(protected: ProtectedSpec) -> Self {
        ObservationalConfig {
            protected,
            min_group_n: DEFAULT_MIN_GROUP_N,
            test_fraction: DEFAULT_TEST_FRACTION,
            seed: 0,
            fit: FitSettings::default(),
            imbalance: ImbalanceMode::None,
            threshold: ThresholdPolicy::default(),
            group_features: false,
            use_external_score: false,
        }
    }
}

/// Per-axis metrics on `d`: each attribute alone, then the intersection when
/// there is more than one attribute.
fn axes_for(d: &Dataset, labels: &[u8], spec: &ProtectedSpec, cohort: Cohort) -> Result<Vec<AxisMetrics>> {
    let mut specs: Vec<ProtectedSpec> = spec
        .attributes
        .iter()
        .map(|a| ProtectedSpec::single(a.clone()).with_separator(spec.separator.clone()))
        .collect();
    if spec.attributes.len() > 1 {
        specs.push(spec.clone());
    }
    specs
        .iter()
        .map(|s| {
            let index = build_intersections(d, s)?;
            Ok(AxisMetrics::from_rates(cohort, confusion_by_group(labels, d.outcome(), &index)?))
        })
        .collect()
}

fn model_terms(d: &Dataset, index: Option<&GroupIndex>) -> Vec<String> {
    let mut terms = vec!["intercept".to_string()];
    terms.extend(d.feature_names().iter().cloned());
    if let Some(index) = index {
        terms.extend(index.labels().iter().skip(1).map(|l| format!("group[{l}]")));
    }
    terms
}

/// Fit (or ingest scores), threshold, and measure group gaps on the test split.
pub fn run_component1(dataset: &Dataset, config: &ObservationalConfig) -> Result<FairnessReport> {
    config.fit.validate()?;
    config.threshold.validate()?;
    let full_index = build_intersections(dataset, &config.protected)?;
    let filtered = filter_min_group(dataset, &full_index, config.min_group_n)?;
    let split = stratified_split(
        &filtered.dataset,
        &filtered.index,
        config.test_fraction,
        derive_seed(config.seed, "split", 0),
    )?;
    let train_index = filtered.index.take(&split.train_rows);
    let test_index = filtered.index.take(&split.test_rows);

    // Removed rows, scored by the same model for the unfiltered cohort.
    let kept: std::collections::BTreeSet<usize> = filtered.kept_rows.iter().copied().collect();
    let removed_rows: Vec<usize> = (0..dataset.n()).filter(|i| !kept.contains(i)).collect();
    let removed = dataset.select(&removed_rows);

    let (train_scores, test_scores, removed_scores, source, model) = if config.use_external_score {
        let (Some(train), Some(test)) = (split.train.score(), split.test.score()) else {
            return Err(AuditError::config("external scores requested but no score column is present"));
        };
        (
            train.to_vec(),
            test.to_vec(),
            removed.score().unwrap_or(&[]).to_vec(),
            ScoreSource::External,
            None,
        )
    } else {
        let balanced = apply_imbalance(
            &split.train,
            &ImbalancePolicy {
                mode: config.imbalance,
                seed: derive_seed(config.seed, "upsample", 0),
            },
        );
        let k = filtered.index.n_groups();
        let design = |d: &Dataset, assignment: &[usize]| {
            if config.group_features {
                with_group_indicators(d.features(), assignment, k)
            } else {
                d.features().clone()
            }
        };
        let balanced_groups: Vec<usize> = balanced.rows.iter().map(|&r| train_index.assignment()[r]).collect();
        let model = fit_logistic(
            &design(&balanced.dataset, &balanced_groups),
            &balanced.dataset.outcome_f64(),
            balanced.weights.as_deref(),
            &config.fit,
        )?;
        let train_scores = model.predict_proba(&design(&split.train, train_index.assignment()))?;
        let test_scores = model.predict_proba(&design(&split.test, test_index.assignment()))?;
        // Removed groups have no indicator column; they are scored at the
        // reference level when group features are on.
        let removed_scores = if removed.n() == 0 {
            Vec::new()
        } else {
            model.predict_proba(&design(&removed, &vec![0; removed.n()]))?
        };
        let terms = model_terms(dataset, config.group_features.then_some(&filtered.index));
        (
            train_scores,
            test_scores,
            removed_scores,
            ScoreSource::Model,
            Some(ModelSummary::new(&model, terms)),
        )
    };

    let threshold = config.threshold.resolve(&train_scores, split.train.outcome())?;
    let test_labels = apply_threshold(&test_scores, threshold);
    let y_test = split.test.outcome();

    let mut axes = axes_for(&split.test, &test_labels, &config.protected, Cohort::Filtered)?;
    if removed.n() > 0 {
        let mut rows: Vec<usize> = split.test_rows.iter().map(|&r| filtered.kept_rows[r]).collect();
        rows.extend(&removed_rows);
        let combined = dataset.select(&rows);
        let mut labels = test_labels.clone();
        labels.extend(apply_threshold(&removed_scores, threshold));
        axes.extend(axes_for(&combined, &labels, &config.protected, Cohort::Unfiltered)?);
    }

    Ok(FairnessReport {
        axes,
        accuracy: accuracy(&test_labels, y_test),
        auroc: auroc(&test_scores, y_test).ok(),
        metadata: ObservationalMetadata {
            seed: config.seed,
            threshold,
            threshold_policy: config.threshold,
            score_source: source,
            imbalance: config.imbalance,
            n_train: split.train.n(),
            n_test: split.test.n(),
            removed_groups: filtered.removed,
            model,
        },
    })
}
