//! Counterfactual error rates and their disparity statistics, shared by the
//! treatment-conditional and the group-intervention audits.

pub mod general;
pub mod treatment;

use serde::{Deserialize, Serialize};

use crate::data::GroupIndex;
use crate::error::{AuditError, Result};
use crate::resampling::{StatMap, UValueTable};

/// Propensities are clamped to `[PROPENSITY_CLAMP, 1 - PROPENSITY_CLAMP]`,
/// bounding inverse weights at 100.
pub const PROPENSITY_CLAMP: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorKind {
    Cfpr,
    Cfnr,
}

impl ErrorKind {
    pub const BOTH: [ErrorKind; 2] = [ErrorKind::Cfpr, ErrorKind::Cfnr];

    pub fn name(self) -> &'static str {
        match self {
            ErrorKind::Cfpr => "cfpr",
            ErrorKind::Cfnr => "cfnr",
        }
    }
}

/// A ratio estimate with the (possibly weighted) size of its denominator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightedRate {
    pub rate: Option<f64>,
    pub weight: f64,
}

impl WeightedRate {
    pub fn from_sums(num: f64, den: f64) -> Self {
        WeightedRate {
            rate: (den > 0.0).then(|| num / den),
            weight: den,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupErrorRates {
    pub label: String,
    pub cfpr: Option<f64>,
    pub cfnr: Option<f64>,
    /// Denominators: row counts or sums of inverse-probability weights.
    pub cfpr_weight: f64,
    pub cfnr_weight: f64,
}

impl GroupErrorRates {
    pub fn get(&self, kind: ErrorKind) -> Option<f64> {
        match kind {
            ErrorKind::Cfpr => self.cfpr,
            ErrorKind::Cfnr => self.cfnr,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CFErrorRates {
    pub groups: Vec<GroupErrorRates>,
}

impl CFErrorRates {
    pub fn new(index: &GroupIndex, cfpr: &[WeightedRate], cfnr: &[WeightedRate]) -> Self {
        CFErrorRates {
            groups: index
                .labels()
                .iter()
                .zip(cfpr.iter().zip(cfnr))
                .map(|(label, (p, n))| GroupErrorRates {
                    label: label.clone(),
                    cfpr: p.rate,
                    cfnr: n.rate,
                    cfpr_weight: p.weight,
                    cfnr_weight: n.weight,
                })
                .collect(),
        }
    }

    /// Defined `(label, rate)` pairs for one error type.
    pub fn defined(&self, kind: ErrorKind) -> Vec<(&str, f64)> {
        self.groups
            .iter()
            .filter_map(|g| g.get(kind).map(|r| (g.label.as_str(), r)))
            .collect()
    }

    pub fn group(&self, label: &str) -> Option<&GroupErrorRates> {
        self.groups.iter().find(|g| g.label == label)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseDisparity {
    pub kind: ErrorKind,
    pub a: String,
    pub b: String,
    pub value: f64,
}

impl PairwiseDisparity {
    pub fn statistic(&self) -> String {
        format!("{}.pair.{} vs {}", self.kind.name(), self.a, self.b)
    }
}

/// `|rate(a) - rate(b)|` for every unordered pair of groups with defined
/// rates, cFPR pairs first.
pub fn pairwise_disparities(rates: &CFErrorRates) -> Vec<PairwiseDisparity> {
    let mut out = Vec::new();
    for kind in ErrorKind::BOTH {
        let defined = rates.defined(kind);
        for (i, (a, ra)) in defined.iter().enumerate() {
            for (b, rb) in &defined[i + 1..] {
                out.push(PairwiseDisparity {
                    kind,
                    a: a.to_string(),
                    b: b.to_string(),
                    value: (ra - rb).abs(),
                });
            }
        }
    }
    out
}

/// What the variance aggregate is computed over.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VarianceOver {
    #[default]
    PairwiseDifferences,
    Rates,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AggregateUnfairness {
    pub average: f64,
    pub maximum: f64,
    pub variance: f64,
}

fn population_variance(values: &[f64]) -> f64 {
    let m = values.len() as f64;
    let mean = values.iter().sum::<f64>() / m;
    values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / m
}

/// Mean, max and population variance of the pairwise absolute differences
/// among `rates`.
pub fn aggregate_values(rates: &[f64], variance: VarianceOver) -> Result<AggregateUnfairness> {
    if rates.len() < 2 {
        return Err(AuditError::data(format!(
            "aggregate unfairness needs at least 2 groups with defined rates, got {}",
            rates.len()
        )));
    }
    let mut diffs = Vec::with_capacity(rates.len() * (rates.len() - 1) / 2);
    for (i, a) in rates.iter().enumerate() {
        for b in &rates[i + 1..] {
            diffs.push((a - b).abs());
        }
    }
    Ok(AggregateUnfairness {
        average: diffs.iter().sum::<f64>() / diffs.len() as f64,
        maximum: diffs.iter().copied().fold(0.0, f64::max),
        variance: match variance {
            VarianceOver::PairwiseDifferences => population_variance(&diffs),
            VarianceOver::Rates => population_variance(rates),
        },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorAggregates {
    pub cfpr: Option<AggregateUnfairness>,
    pub cfnr: Option<AggregateUnfairness>,
}

/// Aggregates for both error types. Errors when neither type has two
/// defined groups; a type with fewer is left `None`.
pub fn aggregate_unfairness(rates: &CFErrorRates, variance: VarianceOver) -> Result<ErrorAggregates> {
    let agg = |kind| {
        let v: Vec<f64> = rates.defined(kind).iter().map(|p| p.1).collect();
        aggregate_values(&v, variance)
    };
    match (agg(ErrorKind::Cfpr), agg(ErrorKind::Cfnr)) {
        (Err(e), Err(_)) => Err(e),
        (p, n) => Ok(ErrorAggregates {
            cfpr: p.ok(),
            cfnr: n.ok(),
        }),
    }
}

/// Named statistics: `<kind>.average|maximum|variance`, plus one
/// `<kind>.pair.<a> vs <b>` entry per pair when `pairs` is set.
pub fn statistics(rates: &CFErrorRates, variance: VarianceOver, pairs: bool) -> StatMap {
    let mut out = StatMap::new();
    for kind in ErrorKind::BOTH {
        let v: Vec<f64> = rates.defined(kind).iter().map(|p| p.1).collect();
        let agg = aggregate_values(&v, variance).ok();
        let k = kind.name();
        out.insert(format!("{k}.average"), agg.map(|a| a.average));
        out.insert(format!("{k}.maximum"), agg.map(|a| a.maximum));
        out.insert(format!("{k}.variance"), agg.map(|a| a.variance));
    }
    if pairs {
        for p in pairwise_disparities(rates) {
            out.insert(p.statistic(), Some(p.value));
        }
    }
    out
}

/// Largest u-value among the `maximum` aggregates.
pub fn max_statistic_u(table: &UValueTable) -> Option<f64> {
    table
        .rows
        .iter()
        .filter(|r| r.statistic.ends_with(".maximum"))
        .map(|r| r.u_value)
        .reduce(f64::max)
}
