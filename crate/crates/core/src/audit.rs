//! Runs the selected components in order and assembles the report.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::config::AuditConfig;
use crate::counterfactual::general::run_component3;
use crate::counterfactual::treatment::run_component2;
use crate::data::{build_intersections, filter_min_group, Dataset, RemovedGroup};
use crate::error::{AuditError, Result, StageExt};
use crate::observational::run_component1;
use crate::report::{canonicalize, AuditReport, GeneralSection, Provenance, TreatmentSection};

/// What `validate` learned about the data without running anything.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationSummary {
    pub n_rows: usize,
    pub n_features: usize,
    pub groups: BTreeMap<String, usize>,
    pub removed_groups: Vec<RemovedGroup>,
    pub n_rows_audited: usize,
}

/// Config checks plus every data check the selected components need.
pub fn validate(config: &AuditConfig, dataset: &Dataset) -> Result<ValidationSummary> {
    config.validate()?;
    if config.columns.score.is_some() && dataset.score().is_none() {
        return Err(AuditError::config("the config names a score column but the data has no scores"));
    }
    let needs_treatment = config.components.contains(&2);
    if needs_treatment && dataset.treatment().is_none() {
        return Err(AuditError::config("component 2 needs a treatment column"));
    }
    let index = build_intersections(dataset, &config.protected_spec())?;
    let filtered = filter_min_group(dataset, &index, config.min_group_n)?;
    if filtered.index.n_groups() < 2 {
        return Err(AuditError::data(format!(
            "{} group(s) left after dropping groups smaller than {}; at least 2 are needed",
            filtered.index.n_groups(),
            config.min_group_n
        )));
    }
    let y = filtered.dataset.outcome();
    if y.iter().all(|&v| v == y[0]) {
        return Err(AuditError::data("the outcome takes a single value in the audited rows"));
    }
    if needs_treatment {
        let d = filtered.dataset.treatment().expect("checked above");
        if d.iter().all(|&v| v == d[0]) {
            return Err(AuditError::data("every audited row has the same treatment value"));
        }
    }
    Ok(ValidationSummary {
        n_rows: dataset.n(),
        n_features: dataset.p(),
        groups: index.count_map(),
        removed_groups: filtered.removed,
        n_rows_audited: filtered.dataset.n(),
    })
}

/// Components 1, 2 and 3 (whichever are selected) in that order. Errors
/// carry the name of the component that raised them.
pub fn run_audit(config: &AuditConfig, dataset: &Dataset) -> Result<AuditReport> {
    let summary = validate(config, dataset)?;
    let has = |c: u8| config.components.contains(&c);

    let observational = if has(1) {
        Some(run_component1(dataset, &config.observational()).stage("observational")?)
    } else {
        None
    };
    let treatment = if has(2) {
        let audit = run_component2(dataset, &config.treatment()).stage("treatment")?;
        Some(TreatmentSection::from(&audit))
    } else {
        None
    };
    let general = if has(3) {
        let audit = run_component3(dataset, &config.general()).stage("general")?;
        Some(GeneralSection::from(&audit))
    } else {
        None
    };

    let report = AuditReport {
        observational,
        treatment,
        general,
        provenance: Provenance {
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed: config.seed,
            config: config.clone(),
            n_rows: summary.n_rows,
            n_rows_audited: summary.n_rows_audited,
            groups: summary.groups,
            removed_groups: summary.removed_groups,
        },
    };
    canonicalize(&report)
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeSet;

    use super::*;
    use crate::report::to_canonical_json;
    use crate::synth::{generate_synthetic, SynthSpec};

    fn small_config(components: &[u8]) -> AuditConfig {
        let mut c = AuditConfig::new("y", vec!["race".into(), "gender".into()]);
        c.components = components.iter().copied().collect::<BTreeSet<_>>();
        c.n_permutations = 20;
        c.n_bootstrap = 5;
        c.seed = 5;
        c
    }

    fn data(treatment: bool) -> Dataset {
        generate_synthetic(&SynthSpec {
            n: 800,
            treatment_rate: treatment.then_some(0.4),
            seed: 1,
            ..SynthSpec::default()
        })
        .unwrap()
    }

    #[test]
    fn observational_only() {
        let r = run_audit(&small_config(&[1]), &data(false)).unwrap();
        assert!(r.observational.is_some());
        assert!(r.treatment.is_none() && r.general.is_none());
        assert_eq!(r.provenance.n_rows, 800);
        assert_eq!(r.provenance.groups.len(), 4);
    }

    #[test]
    fn treatment_without_column_is_config_error() {
        let mut c = small_config(&[2]);
        c.columns.treatment = Some("d".into());
        let err = run_audit(&c, &data(false)).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn full_run_has_every_panel() {
        let mut c = small_config(&[1, 2, 3]);
        c.columns.treatment = Some("d".into());
        let r = run_audit(&c, &data(true)).unwrap();
        for section in [&r.treatment.as_ref().unwrap().u_values, &r.general.as_ref().unwrap().u_values] {
            for kind in ["cfpr", "cfnr"] {
                for agg in ["average", "maximum", "variance"] {
                    assert!(section.get(&format!("{kind}.{agg}")).is_some(), "{kind}.{agg}");
                }
            }
        }
        let g = r.general.as_ref().unwrap();
        assert_eq!(g.null[0].bins.iter().map(|b| b.count).sum::<usize>(), 20);
    }

    #[test]
    fn report_round_trips_through_json() {
        let mut c = small_config(&[1, 2, 3]);
        c.columns.treatment = Some("d".into());
        let r = run_audit(&c, &data(true)).unwrap();
        let text = to_canonical_json(&r).unwrap();
        let back = crate::report::parse_report(&text).unwrap();
        assert_eq!(back, r);
        assert_eq!(to_canonical_json(&back).unwrap(), text);
    }

    #[test]
    fn filtering_every_group_is_data_error() {
        let mut c = small_config(&[1]);
        c.min_group_n = 10_000;
        let err = run_audit(&c, &data(false)).unwrap_err();
        assert_eq!(err.exit_code(), 3);
    }
}
