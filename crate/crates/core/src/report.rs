//! The audit report, its canonical JSON form, and the files written next to
//! it: CSV tables, per-statistic plot data and optional SVG histograms.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::config::AuditConfig;
use crate::counterfactual::general::{GeneralAudit, GeneralMetadata};
use crate::counterfactual::treatment::{TreatmentAudit, TreatmentMetadata};
use crate::counterfactual::{max_statistic_u, pairwise_disparities, CFErrorRates, ErrorAggregates, PairwiseDisparity};
use crate::data::RemovedGroup;
use crate::error::{AuditError, Result};
use crate::observational::FairnessReport;
use crate::resampling::{BootstrapResult, Interval, NullDistribution, UValueTable};

pub const HISTOGRAM_BINS: usize = 20;
pub const SIGNIFICANT_DIGITS: usize = 12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
}

/// Equal-width bins over `[min, max]` of the samples; the last bin is closed.
/// A constant sample lands in a single unit-width bin.
pub fn histogram(samples: &[f64], bins: usize) -> Vec<HistogramBin> {
    let bins = bins.max(1);
    if samples.is_empty() {
        return Vec::new();
    }
    let lo = samples.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = samples.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if lo == hi {
        return vec![HistogramBin {
            lower: lo - 0.5,
            upper: lo + 0.5,
            count: samples.len(),
        }];
    }
    let width = (hi - lo) / bins as f64;
    let mut out: Vec<HistogramBin> = (0..bins)
        .map(|b| HistogramBin {
            lower: lo + width * b as f64,
            upper: if b + 1 == bins { hi } else { lo + width * (b + 1) as f64 },
            count: 0,
        })
        .collect();
    for &s in samples {
        let b = (((s - lo) / width).floor() as usize).min(bins - 1);
        out[b].count += 1;
    }
    out
}

/// Plot data for one statistic's permutation null.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NullSummary {
    pub statistic: String,
    pub n_permutations: usize,
    pub bins: Vec<HistogramBin>,
    pub observed: Option<f64>,
    pub null_quantile: Option<f64>,
    pub u_value: Option<f64>,
    pub threshold: f64,
    pub flagged: bool,
}

impl NullSummary {
    pub fn from_null(null: &NullDistribution, u_values: &UValueTable) -> Vec<NullSummary> {
        null.samples
            .iter()
            .map(|(name, samples)| {
                let row = u_values.get(name);
                NullSummary {
                    statistic: name.clone(),
                    n_permutations: null.n_permutations,
                    bins: histogram(samples, HISTOGRAM_BINS),
                    observed: row.map(|r| r.observed),
                    null_quantile: row.map(|r| r.null_quantile),
                    u_value: row.map(|r| r.u_value),
                    threshold: u_values.threshold,
                    flagged: row.is_some_and(|r| r.flagged),
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapSummary {
    pub n_resamples: usize,
    pub alpha: f64,
    pub intervals: BTreeMap<String, Interval>,
}

impl From<&BootstrapResult> for BootstrapSummary {
    fn from(b: &BootstrapResult) -> Self {
        BootstrapSummary {
            n_resamples: b.n_resamples,
            alpha: b.alpha,
            intervals: b.intervals.clone(),
        }
    }
}

/// Counterfactual rates, disparities and their uncertainty for one component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "M: Serialize + DeserializeOwned")]
pub struct CounterfactualSection<M> {
    pub rates: CFErrorRates,
    /// Single-robust rates kept beside doubly robust ones.
    pub sr_rates: Option<CFErrorRates>,
    pub pairwise: Vec<PairwiseDisparity>,
    pub aggregates: ErrorAggregates,
    pub u_values: UValueTable,
    /// Largest u-value among the maximum-disparity statistics.
    pub max_statistic_u: Option<f64>,
    pub null: Vec<NullSummary>,
    /// Statistics undefined in at least one permutation.
    pub dropped_statistics: Vec<String>,
    pub bootstrap: Option<BootstrapSummary>,
    pub metadata: M,
}

pub type TreatmentSection = CounterfactualSection<TreatmentMetadata>;
pub type GeneralSection = CounterfactualSection<GeneralMetadata>;

impl From<&TreatmentAudit> for TreatmentSection {
    fn from(a: &TreatmentAudit) -> Self {
        CounterfactualSection {
            rates: a.rates.clone(),
            sr_rates: None,
            pairwise: a.pairwise.clone(),
            aggregates: a.aggregates,
            u_values: a.u_values.clone(),
            max_statistic_u: max_statistic_u(&a.u_values),
            null: NullSummary::from_null(&a.null, &a.u_values),
            dropped_statistics: a.null.dropped.clone(),
            bootstrap: a.bootstrap.as_ref().map(BootstrapSummary::from),
            metadata: a.metadata.clone(),
        }
    }
}

impl From<&GeneralAudit> for GeneralSection {
    fn from(a: &GeneralAudit) -> Self {
        CounterfactualSection {
            rates: a.rates.clone(),
            sr_rates: a.sr_rates.clone(),
            pairwise: pairwise_disparities(&a.rates),
            aggregates: a.aggregates,
            u_values: a.u_values.clone(),
            max_statistic_u: max_statistic_u(&a.u_values),
            null: NullSummary::from_null(&a.null, &a.u_values),
            dropped_statistics: a.null.dropped.clone(),
            bootstrap: a.bootstrap.as_ref().map(BootstrapSummary::from),
            metadata: a.metadata.clone(),
        }
    }
}

/// What produced the report. Re-running with `config` on the same data
/// reproduces it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub version: String,
    pub seed: u64,
    /// Effective configuration, defaults and flag overrides resolved.
    pub config: AuditConfig,
    pub n_rows: usize,
    /// Rows left after small-group filtering.
    pub n_rows_audited: usize,
    /// Intersectional group sizes before filtering.
    pub groups: BTreeMap<String, usize>,
    pub removed_groups: Vec<RemovedGroup>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub observational: Option<FairnessReport>,
    pub treatment: Option<TreatmentSection>,
    pub general: Option<GeneralSection>,
    pub provenance: Provenance,
}

/// `x` rounded to [`SIGNIFICANT_DIGITS`] significant decimal digits.
pub fn round_significant(x: f64) -> f64 {
    if !x.is_finite() || x == 0.0 {
        return x;
    }
    format!("{:.*e}", SIGNIFICANT_DIGITS - 1, x).parse().expect("formatted float parses")
}

fn round_floats(v: &mut Value) {
    match v {
        Value::Number(n) if n.is_f64() => {
            let r = round_significant(n.as_f64().expect("f64 number"));
            *v = serde_json::Number::from_f64(r).map_or(Value::Null, Value::Number);
        }
        Value::Array(items) => items.iter_mut().for_each(round_floats),
        Value::Object(map) => map.values_mut().for_each(round_floats),
        _ => {}
    }
}

/// JSON tree with sorted keys and rounded floats.
pub fn canonical_value<T: Serialize>(value: &T) -> Result<Value> {
    let mut v = serde_json::to_value(value).map_err(|e| AuditError::numerical(format!("cannot serialize: {e}")))?;
    round_floats(&mut v);
    Ok(v)
}

pub fn to_canonical_json<T: Serialize>(value: &T) -> Result<String> {
    let v = canonical_value(value)?;
    let mut s = serde_json::to_string_pretty(&v).map_err(|e| AuditError::numerical(format!("cannot serialize: {e}")))?;
    s.push('\n');
    Ok(s)
}

/// `value` passed through its canonical JSON form. A non-finite number in a
/// required field surfaces here as a numerical error.
pub fn canonicalize<T: Serialize + DeserializeOwned>(value: &T) -> Result<T> {
    let v = canonical_value(value)?;
    serde_json::from_value(v).map_err(|e| AuditError::numerical(format!("report holds a non-finite value: {e}")))
}

pub fn parse_report(text: &str) -> Result<AuditReport> {
    serde_json::from_str(text).map_err(|e| AuditError::data(format!("invalid report JSON: {e}")))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RenderOptions {
    pub svg: bool,
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn csv_bytes(header: &[&str], rows: Vec<Vec<String>>) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for r in rows {
        w.write_record(&r).expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}

fn observational_tables(r: &FairnessReport) -> Vec<(&'static str, Vec<u8>)> {
    let cohort = |a: &crate::observational::AxisMetrics| {
        serde_json::to_value(a.cohort).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default()
    };
    let mut groups = Vec::new();
    let mut gaps = Vec::new();
    for a in &r.axes {
        for g in &a.rates.groups {
            groups.push(vec![
                cohort(a),
                a.axis().to_string(),
                g.label.clone(),
                g.n.to_string(),
                g.tp.to_string(),
                g.fp.to_string(),
                g.tn.to_string(),
                g.fn_.to_string(),
                opt(g.tpr),
                opt(g.fpr),
                opt(g.selection_rate),
            ]);
        }
        gaps.push(vec![
            cohort(a),
            a.axis().to_string(),
            opt(a.dp_gap),
            opt(a.eo_tpr_gap),
            opt(a.eo_fpr_gap),
            opt(a.eod_gap),
        ]);
    }
    let summary = vec![
        vec!["accuracy".to_string(), r.accuracy.to_string()],
        vec!["auroc".to_string(), opt(r.auroc)],
        vec!["threshold".to_string(), r.metadata.threshold.to_string()],
    ];
    vec![
        (
            "observational_groups.csv",
            csv_bytes(
                &["cohort", "axis", "group", "n", "tp", "fp", "tn", "fn", "tpr", "fpr", "selection_rate"],
                groups,
            ),
        ),
        (
            "observational_gaps.csv",
            csv_bytes(&["cohort", "axis", "dp_gap", "eo_tpr_gap", "eo_fpr_gap", "eod_gap"], gaps),
        ),
        ("observational_summary.csv", csv_bytes(&["metric", "value"], summary)),
    ]
}

fn counterfactual_tables<M>(name: &str, s: &CounterfactualSection<M>) -> Vec<(String, Vec<u8>)> {
    let sr = |label: &str, f: fn(&crate::counterfactual::GroupErrorRates) -> Option<f64>| {
        opt(s.sr_rates.as_ref().and_then(|r| r.group(label)).and_then(f))
    };
    let rates = s
        .rates
        .groups
        .iter()
        .map(|g| {
            vec![
                g.label.clone(),
                opt(g.cfpr),
                opt(g.cfnr),
                g.cfpr_weight.to_string(),
                g.cfnr_weight.to_string(),
                sr(&g.label, |r| r.cfpr),
                sr(&g.label, |r| r.cfnr),
            ]
        })
        .collect();
    let pairwise = s
        .pairwise
        .iter()
        .map(|p| vec![p.kind.name().to_string(), p.a.clone(), p.b.clone(), p.value.to_string()])
        .collect();
    let interval = |stat: &str| s.bootstrap.as_ref().and_then(|b| b.intervals.get(stat));
    let u = s
        .u_values
        .rows
        .iter()
        .map(|r| {
            let ci = interval(&r.statistic);
            vec![
                r.statistic.clone(),
                r.observed.to_string(),
                r.null_quantile.to_string(),
                r.u_value.to_string(),
                r.threshold.to_string(),
                r.flagged.to_string(),
                opt(ci.map(|c| c.lower)),
                opt(ci.map(|c| c.upper)),
            ]
        })
        .collect();
    vec![
        (
            format!("{name}_rates.csv"),
            csv_bytes(&["group", "cfpr", "cfnr", "cfpr_weight", "cfnr_weight", "sr_cfpr", "sr_cfnr"], rates),
        ),
        (format!("{name}_pairwise.csv"), csv_bytes(&["kind", "a", "b", "value"], pairwise)),
        (
            format!("{name}_u_values.csv"),
            csv_bytes(
                &["statistic", "observed", "null_quantile", "u_value", "threshold", "flagged", "ci_lower", "ci_upper"],
                u,
            ),
        ),
    ]
}

fn slug(s: &str) -> String {
    s.chars()
        .map(|c| if c.is_ascii_alphanumeric() || matches!(c, '.' | '-' | '_') { c } else { '_' })
        .collect()
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Histogram of the null with the observed value (solid) and the null
/// quantile (dashed) marked.
pub fn histogram_svg(summary: &NullSummary) -> String {
    let (w, h, pad) = (480.0, 300.0, 40.0);
    let mut lo = summary.bins.first().map_or(0.0, |b| b.lower);
    let mut hi = summary.bins.last().map_or(1.0, |b| b.upper);
    for v in [summary.observed, summary.null_quantile].into_iter().flatten() {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if hi <= lo {
        hi = lo + 1.0;
    }
    let max_count = summary.bins.iter().map(|b| b.count).max().unwrap_or(1).max(1) as f64;
    let sx = |v: f64| pad + (v - lo) / (hi - lo) * (w - 2.0 * pad);
    let sy = |c: f64| h - pad - c / max_count * (h - 2.0 * pad);
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#
    );
    let _ = writeln!(svg, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{pad}" y="20" font-family="sans-serif" font-size="12">{}</text>"#,
        esc(&summary.statistic)
    );
    for b in &summary.bins {
        let (x0, x1, y) = (sx(b.lower), sx(b.upper), sy(b.count as f64));
        let _ = writeln!(
            svg,
            r##"<rect x="{x0:.2}" y="{y:.2}" width="{:.2}" height="{:.2}" fill="#9ab" stroke="#567"/>"##,
            (x1 - x0).max(0.5),
            h - pad - y
        );
    }
    let axis_y = h - pad;
    let _ = writeln!(
        svg,
        r#"<line x1="{pad}" y1="{axis_y}" x2="{}" y2="{axis_y}" stroke="black"/>"#,
        w - pad
    );
    for (v, style) in [
        (summary.null_quantile, r##"stroke="#555" stroke-dasharray="4 3""##),
        (summary.observed, r##"stroke="#c22" stroke-width="2""##),
    ] {
        if let Some(v) = v {
            let x = sx(v);
            let _ = writeln!(svg, r#"<line x1="{x:.2}" y1="{pad}" x2="{x:.2}" y2="{axis_y}" {style}/>"#);
        }
    }
    let label = match summary.u_value {
        Some(u) => format!("u = {u:.4} (threshold {})", summary.threshold),
        None => "u undefined".to_string(),
    };
    let _ = writeln!(
        svg,
        r#"<text x="{pad}" y="{}" font-family="sans-serif" font-size="11">{}</text>"#,
        h - 12.0,
        esc(&label)
    );
    svg.push_str("</svg>\n");
    svg
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| AuditError::io(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| AuditError::io(path, e))
}

/// Writes `report.json`, `tables/*.csv`, `plots/*.json` and, when asked,
/// `plots/*.svg` under `out_dir`. Returns the written paths.
pub fn render_report(report: &AuditReport, out_dir: &Path, options: RenderOptions) -> Result<Vec<PathBuf>> {
    let tables_dir = out_dir.join("tables");
    let plots_dir = out_dir.join("plots");
    create_dir(&tables_dir)?;
    create_dir(&plots_dir)?;
    let mut written = Vec::new();

    let json_path = out_dir.join("report.json");
    write_file(&json_path, to_canonical_json(report)?.as_bytes())?;
    written.push(json_path);

    let mut tables: Vec<(String, Vec<u8>)> = Vec::new();
    if let Some(o) = &report.observational {
        tables.extend(observational_tables(o).into_iter().map(|(n, b)| (n.to_string(), b)));
    }
    let mut plots: Vec<(&str, &NullSummary)> = Vec::new();
    if let Some(t) = &report.treatment {
        tables.extend(counterfactual_tables("treatment", t));
        plots.extend(t.null.iter().map(|s| ("treatment", s)));
    }
    if let Some(g) = &report.general {
        tables.extend(counterfactual_tables("general", g));
        plots.extend(g.null.iter().map(|s| ("general", s)));
    }
    for (name, bytes) in tables {
        let path = tables_dir.join(name);
        write_file(&path, &bytes)?;
        written.push(path);
    }

    let mut used = BTreeSet::new();
    for (component, summary) in plots {
        let base = format!("{component}__{}", slug(&summary.statistic));
        let mut stem = base.clone();
        let mut k = 2;
        while !used.insert(stem.clone()) {
            stem = format!("{base}_{k}");
            k += 1;
        }
        let path = plots_dir.join(format!("{stem}.json"));
        write_file(&path, to_canonical_json(summary)?.as_bytes())?;
        written.push(path);
        if options.svg {
            let path = plots_dir.join(format!("{stem}.svg"));
            write_file(&path, histogram_svg(summary).as_bytes())?;
            written.push(path);
        }
    }
    Ok(written)
}
