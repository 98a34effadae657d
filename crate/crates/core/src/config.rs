//! Audit configuration: one JSON document, every field optional except the
//! outcome and protected columns.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::counterfactual::general::{EstimationMode, GeneralConfig, ScoreScale};
use crate::counterfactual::treatment::TreatmentConfig;
use crate::counterfactual::VarianceOver;
use crate::data::{ProtectedSpec, DEFAULT_MIN_GROUP_N, DEFAULT_SEPARATOR};
use crate::error::{AuditError, Result};
use crate::estimators::{FitSettings, ImbalanceMode, ThresholdPolicy};
use crate::observational::{ObservationalConfig, DEFAULT_TEST_FRACTION};
use crate::resampling::{
    ResamplingSettings, DEFAULT_ALPHA, DEFAULT_BOOTSTRAP, DEFAULT_PERMUTATIONS, DEFAULT_UNFAIRNESS_THRESHOLD,
};

/// Which CSV column plays which role.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ColumnRoles {
    pub outcome: String,
    pub protected: Vec<String>,
    #[serde(default)]
    pub treatment: Option<String>,
    /// Predicted probabilities to audit instead of fitting a model.
    #[serde(default)]
    pub score: Option<String>,
    /// Covariates; every column without another role when absent.
    #[serde(default)]
    pub features: Option<Vec<String>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub l2: f64,
    pub tol: f64,
    pub max_iter: usize,
    /// Give the built-in classifier group indicators as features.
    pub group_features: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        let f = FitSettings::default();
        ModelConfig {
            l2: f.l2,
            tol: f.tol,
            max_iter: f.max_iter,
            group_features: false,
        }
    }
}

impl ModelConfig {
    pub fn fit(&self) -> FitSettings {
        FitSettings {
            l2: self.l2,
            tol: self.tol,
            max_iter: self.max_iter,
        }
    }
}

fn default_components() -> BTreeSet<u8> {
    BTreeSet::from([1, 2, 3])
}
fn default_separator() -> String {
    DEFAULT_SEPARATOR.to_string()
}
fn default_min_group_n() -> usize {
    DEFAULT_MIN_GROUP_N
}
fn default_test_fraction() -> f64 {
    DEFAULT_TEST_FRACTION
}
fn default_permutations() -> usize {
    DEFAULT_PERMUTATIONS
}
fn default_bootstrap() -> usize {
    DEFAULT_BOOTSTRAP
}
fn default_alpha() -> f64 {
    DEFAULT_ALPHA
}
fn default_unfairness_threshold() -> f64 {
    DEFAULT_UNFAIRNESS_THRESHOLD
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AuditConfig {
    pub columns: ColumnRoles,
    /// 1 observational, 2 treatment-conditional, 3 group-intervention.
    #[serde(default = "default_components")]
    pub components: BTreeSet<u8>,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub imbalance: ImbalanceMode,
    #[serde(default)]
    pub threshold: ThresholdPolicy,
    #[serde(default = "default_separator")]
    pub separator: String,
    #[serde(default = "default_min_group_n")]
    pub min_group_n: usize,
    #[serde(default = "default_test_fraction")]
    pub test_fraction: f64,
    #[serde(default = "default_permutations")]
    pub n_permutations: usize,
    #[serde(default = "default_bootstrap")]
    pub n_bootstrap: usize,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_unfairness_threshold")]
    pub unfairness_threshold: f64,
    #[serde(default)]
    pub mode: EstimationMode,
    #[serde(default)]
    pub scale: ScoreScale,
    #[serde(default)]
    pub variance: VarianceOver,
    /// Data-borrowing floor for treatment-conditional rates; 0 disables.
    #[serde(default)]
    pub min_eff: f64,
    #[serde(default)]
    pub seed: u64,
}

impl AuditConfig {
    /// A config with every optional field at its default.
    pub fn new(outcome: impl Into<String>, protected: Vec<String>) -> Self {
        AuditConfig {
            columns: ColumnRoles {
                outcome: outcome.into(),
                protected,
                treatment: None,
                score: None,
                features: None,
            },
            components: default_components(),
            model: ModelConfig::default(),
            imbalance: ImbalanceMode::None,
            threshold: ThresholdPolicy::default(),
            separator: default_separator(),
            min_group_n: DEFAULT_MIN_GROUP_N,
            test_fraction: DEFAULT_TEST_FRACTION,
            n_permutations: DEFAULT_PERMUTATIONS,
            n_bootstrap: DEFAULT_BOOTSTRAP,
            alpha: DEFAULT_ALPHA,
            unfairness_threshold: DEFAULT_UNFAIRNESS_THRESHOLD,
            mode: EstimationMode::Sr,
            scale: ScoreScale::Soft,
            variance: VarianceOver::default(),
            min_eff: 0.0,
            seed: 0,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| AuditError::config(format!("invalid config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| AuditError::io(path, e))?;
        Self::from_json(&text)
    }

    /// Checks that do not need the data.
    pub fn validate(&self) -> Result<()> {
        if self.components.is_empty() {
            return Err(AuditError::config("no components selected"));
        }
        if let Some(c) = self.components.iter().find(|c| !(1..=3).contains(*c)) {
            return Err(AuditError::config(format!("unknown component {c}; expected 1, 2 or 3")));
        }
        if self.columns.protected.is_empty() {
            return Err(AuditError::config("at least one protected column is required"));
        }
        if self.separator.is_empty() {
            return Err(AuditError::config("separator must be non-empty"));
        }
        let mut roles: Vec<&String> = vec![&self.columns.outcome];
        roles.extend(&self.columns.protected);
        roles.extend(self.columns.treatment.iter());
        roles.extend(self.columns.score.iter());
        let mut seen = BTreeSet::new();
        for r in &roles {
            if !seen.insert(*r) {
                return Err(AuditError::config(format!("column '{r}' is assigned more than one role")));
            }
        }
        if let Some(features) = &self.columns.features {
            if let Some(f) = features.iter().find(|f| seen.contains(f)) {
                return Err(AuditError::config(format!("column '{f}' cannot be both a feature and another role")));
            }
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(AuditError::config(format!(
                "test_fraction must lie in (0, 1), got {}",
                self.test_fraction
            )));
        }
        if !(self.min_eff >= 0.0 && self.min_eff.is_finite()) {
            return Err(AuditError::config(format!("min_eff must be non-negative, got {}", self.min_eff)));
        }
        if self.components.contains(&2) && self.columns.treatment.is_none() {
            return Err(AuditError::config("component 2 needs a treatment column"));
        }
        self.model.fit().validate()?;
        self.threshold.validate()?;
        if self.components.iter().any(|&c| c >= 2) {
            self.resampling().validate()?;
        }
        Ok(())
    }

    pub fn protected_spec(&self) -> ProtectedSpec {
        ProtectedSpec::new(self.columns.protected.clone()).with_separator(self.separator.clone())
    }

    pub fn resampling(&self) -> ResamplingSettings {
        ResamplingSettings {
            n_permutations: self.n_permutations,
            n_bootstrap: self.n_bootstrap,
            alpha: self.alpha,
            unfairness_threshold: self.unfairness_threshold,
        }
    }

    pub fn observational(&self) -> ObservationalConfig {
        ObservationalConfig {
            protected: self.protected_spec(),
            min_group_n: self.min_group_n,
            test_fraction: self.test_fraction,
            seed: self.seed,
            fit: self.model.fit(),
            imbalance: self.imbalance,
            threshold: self.threshold,
            group_features: self.model.group_features,
            use_external_score: self.columns.score.is_some(),
        }
    }

    pub fn treatment(&self) -> TreatmentConfig {
        TreatmentConfig {
            protected: self.protected_spec(),
            min_group_n: self.min_group_n,
            seed: self.seed,
            fit: self.model.fit(),
            threshold: self.threshold,
            use_external_score: self.columns.score.is_some(),
            group_features: self.model.group_features,
            resampling: self.resampling(),
            min_eff: self.min_eff,
            variance: self.variance,
        }
    }

    pub fn general(&self) -> GeneralConfig {
        GeneralConfig {
            protected: self.protected_spec(),
            min_group_n: self.min_group_n,
            seed: self.seed,
            fit: self.model.fit(),
            mode: self.mode,
            scale: self.scale,
            threshold: self.threshold,
            use_external_score: self.columns.score.is_some(),
            resampling: self.resampling(),
            variance: self.variance,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{"columns": {"outcome": "y", "protected": ["race", "gender"]}, "components": [1, 3]}"#;

    #[test]
    fn defaults_fill_in() {
        let c = AuditConfig::from_json(MINIMAL).unwrap();
        assert_eq!(c.min_group_n, 20);
        assert_eq!(c.test_fraction, 0.2);
        assert_eq!(c.n_permutations, 200);
        assert_eq!(c.n_bootstrap, 100);
        assert_eq!(c.alpha, 0.05);
        assert_eq!(c.unfairness_threshold, 0.1);
        assert_eq!(c.mode, EstimationMode::Sr);
        assert_eq!(c.threshold, ThresholdPolicy::Fixed { value: 0.5 });
        c.validate().unwrap();
    }

    #[test]
    fn echo_round_trips() {
        let c = AuditConfig::from_json(MINIMAL).unwrap();
        let text = serde_json::to_string(&c).unwrap();
        assert_eq!(AuditConfig::from_json(&text).unwrap(), c);
    }

    #[test]
    fn unknown_fields_rejected() {
        let err = AuditConfig::from_json(r#"{"columns": {"outcome": "y", "protected": ["a"]}, "permutations": 5}"#)
            .unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn treatment_component_needs_column() {
        let mut c = AuditConfig::from_json(MINIMAL).unwrap();
        c.components.insert(2);
        assert!(c.validate().is_err());
        c.columns.treatment = Some("d".into());
        c.validate().unwrap();
    }

    #[test]
    fn range_checks() {
        let mut c = AuditConfig::from_json(MINIMAL).unwrap();
        c.test_fraction = 1.0;
        assert!(c.validate().is_err());
        let mut c = AuditConfig::from_json(MINIMAL).unwrap();
        c.n_permutations = 0;
        assert!(c.validate().is_err());
        let mut c = AuditConfig::from_json(MINIMAL).unwrap();
        c.components = BTreeSet::from([4]);
        assert!(c.validate().is_err());
        let mut c = AuditConfig::from_json(MINIMAL).unwrap();
        c.columns.treatment = Some("y".into());
        assert!(c.validate().is_err());
    }

    #[test]
    fn threshold_modes_parse() {
        let c = AuditConfig::from_json(
            r#"{"columns": {"outcome": "y", "protected": ["a"]}, "threshold": {"mode": "youden"}, "mode": "dr", "scale": "hard"}"#,
        )
        .unwrap();
        assert_eq!(c.threshold, ThresholdPolicy::Youden);
        assert_eq!(c.general().mode, EstimationMode::Dr);
    }
}
