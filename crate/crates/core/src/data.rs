//! Validated tabular data, intersectional group construction, subgroup
//! filtering and stratified train/test splitting.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{AuditError, Result};

pub const DEFAULT_SEPARATOR: &str = " | ";
pub const DEFAULT_MIN_GROUP_N: usize = 20;

/// One categorical protected attribute, one level string per row.
#[derive(Debug, Clone, PartialEq)]
pub struct ProtectedColumn {
    pub name: String,
    pub values: Vec<String>,
}

/// Validated audit table.
///
/// All columns share the row count `n`. Outcome and treatment are 0/1,
/// scores lie in `[0, 1]`, and every feature value is finite.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    feature_names: Vec<String>,
    features: DMatrix<f64>,
    outcome: Vec<u8>,
    treatment: Option<Vec<u8>>,
    protected: Vec<ProtectedColumn>,
    score: Option<Vec<f64>>,
}

fn check_binary(name: &str, values: &[u8]) -> Result<()> {
    match values.iter().position(|&v| v > 1) {
        Some(i) => Err(AuditError::data(format!(
            "column '{name}' row {}: value {} is not 0/1",
            i + 1,
            values[i]
        ))),
        None => Ok(()),
    }
}

impl Dataset {
    pub fn new(
        features: DMatrix<f64>,
        feature_names: Vec<String>,
        outcome: Vec<u8>,
    ) -> Result<Self> {
        let n = outcome.len();
        if features.nrows() != n {
            return Err(AuditError::data(format!(
                "feature matrix has {} rows but outcome has {n}",
                features.nrows()
            )));
        }
        if features.ncols() != feature_names.len() {
            return Err(AuditError::data(format!(
                "{} feature names for {} feature columns",
                feature_names.len(),
                features.ncols()
            )));
        }
        for (j, name) in feature_names.iter().enumerate() {
            if let Some(i) = features.column(j).iter().position(|v| !v.is_finite()) {
                return Err(AuditError::data(format!(
                    "column '{name}' row {}: non-finite value",
                    i + 1
                )));
            }
        }
        check_binary("outcome", &outcome)?;
        Ok(Dataset {
            feature_names,
            features,
            outcome,
            treatment: None,
            protected: Vec::new(),
            score: None,
        })
    }

    pub fn with_treatment(mut self, treatment: Vec<u8>) -> Result<Self> {
        if treatment.len() != self.n() {
            return Err(AuditError::data(format!(
                "treatment has {} rows, expected {}",
                treatment.len(),
                self.n()
            )));
        }
        check_binary("treatment", &treatment)?;
        self.treatment = Some(treatment);
        Ok(self)
    }

    pub fn with_protected(mut self, name: impl Into<String>, values: Vec<String>) -> Result<Self> {
        let name = name.into();
        if values.len() != self.n() {
            return Err(AuditError::data(format!(
                "protected column '{name}' has {} rows, expected {}",
                values.len(),
                self.n()
            )));
        }
        if self.protected.iter().any(|c| c.name == name) {
            return Err(AuditError::data(format!("duplicate protected column '{name}'")));
        }
        if let Some(i) = values.iter().position(|v| v.is_empty()) {
            return Err(AuditError::data(format!(
                "protected column '{name}' row {}: missing value",
                i + 1
            )));
        }
        self.protected.push(ProtectedColumn { name, values });
        Ok(self)
    }

    pub fn with_score(mut self, score: Vec<f64>) -> Result<Self> {
        if score.len() != self.n() {
            return Err(AuditError::data(format!(
                "score has {} rows, expected {}",
                score.len(),
                self.n()
            )));
        }
        if let Some(i) = score.iter().position(|s| !(0.0..=1.0).contains(s)) {
            return Err(AuditError::data(format!(
                "score row {}: value {} outside [0, 1]",
                i + 1,
                score[i]
            )));
        }
        self.score = Some(score);
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.outcome.len()
    }

    pub fn p(&self) -> usize {
        self.features.ncols()
    }

    pub fn features(&self) -> &DMatrix<f64> {
        &self.features
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn outcome(&self) -> &[u8] {
        &self.outcome
    }

    pub fn treatment(&self) -> Option<&[u8]> {
        self.treatment.as_deref()
    }

    pub fn score(&self) -> Option<&[f64]> {
        self.score.as_deref()
    }

    pub fn protected(&self) -> &[ProtectedColumn] {
        &self.protected
    }

    pub fn attribute_names(&self) -> Vec<&str> {
        self.protected.iter().map(|c| c.name.as_str()).collect()
    }

    pub fn protected_column(&self, name: &str) -> Option<&ProtectedColumn> {
        self.protected.iter().find(|c| c.name == name)
    }

    pub fn outcome_f64(&self) -> Vec<f64> {
        self.outcome.iter().map(|&v| f64::from(v)).collect()
    }

    /// New dataset holding `rows` in the given order. Repeated indices are
    /// allowed (resampling).
    pub fn select(&self, rows: &[usize]) -> Dataset {
        Dataset {
            feature_names: self.feature_names.clone(),
            features: self.features.select_rows(rows),
            outcome: rows.iter().map(|&i| self.outcome[i]).collect(),
            treatment: self
                .treatment
                .as_ref()
                .map(|t| rows.iter().map(|&i| t[i]).collect()),
            protected: self
                .protected
                .iter()
                .map(|c| ProtectedColumn {
                    name: c.name.clone(),
                    values: rows.iter().map(|&i| c.values[i].clone()).collect(),
                })
                .collect(),
            score: self
                .score
                .as_ref()
                .map(|s| rows.iter().map(|&i| s[i]).collect()),
        }
    }
}

/// Which protected attributes define the groups, and how level values are
/// joined into a group label.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProtectedSpec {
    pub attributes: Vec<String>,
    pub separator: String,
}

impl ProtectedSpec {
    pub fn new<S: Into<String>>(attributes: impl IntoIterator<Item = S>) -> Self {
        ProtectedSpec {
            attributes: attributes.into_iter().map(Into::into).collect(),
            separator: DEFAULT_SEPARATOR.to_string(),
        }
    }

    pub fn single(attribute: impl Into<String>) -> Self {
        ProtectedSpec::new([attribute.into()])
    }

    pub fn with_separator(mut self, separator: impl Into<String>) -> Self {
        self.separator = separator.into();
        self
    }

    pub fn validate(&self, dataset: &Dataset) -> Result<()> {
        if self.attributes.is_empty() {
            return Err(AuditError::config("at least one protected attribute is required"));
        }
        if self.separator.is_empty() {
            return Err(AuditError::config("group label separator must be non-empty"));
        }
        let mut seen = BTreeSet::new();
        for a in &self.attributes {
            if !seen.insert(a) {
                return Err(AuditError::config(format!("protected attribute '{a}' listed twice")));
            }
            if dataset.protected_column(a).is_none() {
                return Err(AuditError::config(format!("unknown protected attribute '{a}'")));
            }
        }
        Ok(())
    }
}

/// Row to group assignment. Group ids are dense `0..k` and ordered
/// lexicographically by label.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupIndex {
    assignment: Vec<usize>,
    labels: Vec<String>,
    counts: Vec<usize>,
    attributes: Vec<String>,
}

impl GroupIndex {
    /// Builds an index from explicit per-row labels. Ids follow label order.
    pub fn from_labels(row_labels: &[String], attributes: Vec<String>) -> GroupIndex {
        let distinct: BTreeSet<&String> = row_labels.iter().collect();
        let labels: Vec<String> = distinct.into_iter().cloned().collect();
        let id_of: BTreeMap<&str, usize> = labels
            .iter()
            .enumerate()
            .map(|(i, l)| (l.as_str(), i))
            .collect();
        let assignment: Vec<usize> = row_labels.iter().map(|l| id_of[l.as_str()]).collect();
        let mut counts = vec![0; labels.len()];
        for &g in &assignment {
            counts[g] += 1;
        }
        GroupIndex {
            assignment,
            labels,
            counts,
            attributes,
        }
    }

    /// Builds an index from raw ids. Used by permutation and tests.
    pub fn from_assignment(assignment: Vec<usize>, labels: Vec<String>) -> Result<GroupIndex> {
        let mut counts = vec![0; labels.len()];
        for &g in &assignment {
            if g >= labels.len() {
                return Err(AuditError::config(format!(
                    "group id {g} out of range for {} labels",
                    labels.len()
                )));
            }
            counts[g] += 1;
        }
        Ok(GroupIndex {
            assignment,
            labels,
            counts,
            attributes: Vec::new(),
        })
    }

    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn attributes(&self) -> &[String] {
        &self.attributes
    }

    pub fn n_groups(&self) -> usize {
        self.labels.len()
    }

    pub fn n_rows(&self) -> usize {
        self.assignment.len()
    }

    pub fn is_intersectional(&self) -> bool {
        self.attributes.len() > 1
    }

    /// Short name for the axis: the attribute name, or "intersectional".
    pub fn axis_name(&self) -> String {
        match self.attributes.as_slice() {
            [single] => single.clone(),
            [] => "groups".to_string(),
            _ => "intersectional".to_string(),
        }
    }

    pub fn label(&self, group: usize) -> &str {
        &self.labels[group]
    }

    pub fn count_map(&self) -> BTreeMap<String, usize> {
        self.labels
            .iter()
            .cloned()
            .zip(self.counts.iter().copied())
            .collect()
    }

    /// Same assignment with a different row order or row multiset. All labels
    /// are kept, so counts may be zero in a resample.
    pub fn take(&self, rows: &[usize]) -> GroupIndex {
        let assignment: Vec<usize> = rows.iter().map(|&i| self.assignment[i]).collect();
        let mut counts = vec![0; self.labels.len()];
        for &g in &assignment {
            counts[g] += 1;
        }
        GroupIndex {
            assignment,
            labels: self.labels.clone(),
            counts,
            attributes: self.attributes.clone(),
        }
    }

    /// Replaces the assignment vector, keeping labels. Used for permutations.
    pub fn with_assignment(&self, assignment: Vec<usize>) -> GroupIndex {
        debug_assert_eq!(assignment.len(), self.assignment.len());
        let mut counts = vec![0; self.labels.len()];
        for &g in &assignment {
            counts[g] += 1;
        }
        GroupIndex {
            assignment,
            labels: self.labels.clone(),
            counts,
            attributes: self.attributes.clone(),
        }
    }

    /// Row indices belonging to each group.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.labels.len()];
        for (i, &g) in self.assignment.iter().enumerate() {
            out[g].push(i);
        }
        out
    }
}

/// One group per distinct tuple of attribute levels present in `dataset`.
pub fn build_intersections(dataset: &Dataset, spec: &ProtectedSpec) -> Result<GroupIndex> {
    spec.validate(dataset)?;
    let columns: Vec<&ProtectedColumn> = spec
        .attributes
        .iter()
        .map(|a| dataset.protected_column(a).expect("validated"))
        .collect();
    for col in &columns {
        if let Some(i) = col.values.iter().position(|v| v.contains(&spec.separator)) {
            return Err(AuditError::data(format!(
                "protected column '{}' row {}: level '{}' contains the group separator '{}'",
                col.name,
                i + 1,
                col.values[i],
                spec.separator
            )));
        }
    }
    let row_labels: Vec<String> = (0..dataset.n())
        .map(|i| {
            columns
                .iter()
                .map(|c| c.values[i].as_str())
                .collect::<Vec<_>>()
                .join(&spec.separator)
        })
        .collect();
    Ok(GroupIndex::from_labels(&row_labels, spec.attributes.clone()))
}

/// A group dropped by [`filter_min_group`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RemovedGroup {
    pub label: String,
    pub n: usize,
}

#[derive(Debug, Clone)]
pub struct Filtered {
    pub dataset: Dataset,
    pub index: GroupIndex,
    /// Original row numbers of the surviving rows.
    pub kept_rows: Vec<usize>,
    pub removed: Vec<RemovedGroup>,
}

/// Drops every row whose group has fewer than `min_n` members.
pub fn filter_min_group(dataset: &Dataset, index: &GroupIndex, min_n: usize) -> Result<Filtered> {
    let keep_group: Vec<bool> = index.counts().iter().map(|&c| c >= min_n).collect();
    let removed: Vec<RemovedGroup> = index
        .labels()
        .iter()
        .zip(index.counts())
        .filter(|(_, &c)| c < min_n)
        .map(|(l, &c)| RemovedGroup {
            label: l.clone(),
            n: c,
        })
        .collect();
    let kept_rows: Vec<usize> = (0..dataset.n())
        .filter(|&i| keep_group[index.assignment()[i]])
        .collect();
    if kept_rows.is_empty() {
        return Err(AuditError::data(format!(
            "every group has fewer than {min_n} rows; the cohort is empty after filtering"
        )));
    }
    if removed.is_empty() {
        return Ok(Filtered {
            dataset: dataset.clone(),
            index: index.clone(),
            kept_rows,
            removed,
        });
    }
    let mut remap = vec![usize::MAX; index.n_groups()];
    let mut labels = Vec::new();
    for (g, keep) in keep_group.iter().enumerate() {
        if *keep {
            remap[g] = labels.len();
            labels.push(index.labels()[g].clone());
        }
    }
    let assignment: Vec<usize> = kept_rows.iter().map(|&i| remap[index.assignment()[i]]).collect();
    let mut new_index = GroupIndex::from_assignment(assignment, labels)?;
    new_index.attributes = index.attributes.clone();
    Ok(Filtered {
        dataset: dataset.select(&kept_rows),
        index: new_index,
        kept_rows,
        removed,
    })
}

#[derive(Debug, Clone)]
pub struct Split {
    pub train: Dataset,
    pub test: Dataset,
    pub train_rows: Vec<usize>,
    pub test_rows: Vec<usize>,
}

/// Train/test split stratified on (outcome, group). Strata with fewer than
/// two rows are pooled into outcome-only strata.
pub fn stratified_split(
    dataset: &Dataset,
    index: &GroupIndex,
    test_fraction: f64,
    seed: u64,
) -> Result<Split> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(AuditError::config(format!(
            "test_fraction must lie in (0, 1), got {test_fraction}"
        )));
    }
    let n = dataset.n();
    if n < 2 {
        return Err(AuditError::data(format!("cannot split {n} rows into train and test")));
    }
    if index.n_rows() != n {
        return Err(AuditError::data("group index does not match dataset row count"));
    }

    let mut joint: BTreeMap<(u8, usize), Vec<usize>> = BTreeMap::new();
    for i in 0..n {
        joint
            .entry((dataset.outcome()[i], index.assignment()[i]))
            .or_default()
            .push(i);
    }
    let mut strata: Vec<Vec<usize>> = Vec::new();
    let mut leftovers: BTreeMap<u8, Vec<usize>> = BTreeMap::new();
    for ((y, _), rows) in joint {
        if rows.len() >= 2 {
            strata.push(rows);
        } else {
            leftovers.entry(y).or_default().extend(rows);
        }
    }
    strata.extend(leftovers.into_values());

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut test_rows = Vec::new();
    let mut train_rows = Vec::new();
    for mut rows in strata {
        rows.shuffle(&mut rng);
        let k = (rows.len() as f64 * test_fraction).round() as usize;
        test_rows.extend_from_slice(&rows[..k]);
        train_rows.extend_from_slice(&rows[k..]);
    }
    // Both sides must be non-empty.
    if test_rows.is_empty() {
        test_rows.push(train_rows.pop().expect("n >= 2"));
    } else if train_rows.is_empty() {
        train_rows.push(test_rows.pop().expect("n >= 2"));
    }
    train_rows.sort_unstable();
    test_rows.sort_unstable();
    Ok(Split {
        train: dataset.select(&train_rows),
        test: dataset.select(&test_rows),
        train_rows,
        test_rows,
    })
}
