//! Permutation nulls, bootstrap resampling, deterministic seed derivation,
//! quantiles and u-values.
//!
//! Every iteration draws its own seed from `(master seed, stream, iteration)`,
//! so results do not depend on how iterations are scheduled across threads.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::GroupIndex;
use crate::error::{AuditError, Result};

pub const DEFAULT_PERMUTATIONS: usize = 200;
pub const DEFAULT_BOOTSTRAP: usize = 100;
pub const DEFAULT_ALPHA: f64 = 0.05;
pub const DEFAULT_UNFAIRNESS_THRESHOLD: f64 = 0.1;

/// Null and bootstrap sizes plus the u-value rule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResamplingSettings {
    pub n_permutations: usize,
    /// 0 disables the bootstrap.
    pub n_bootstrap: usize,
    pub alpha: f64,
    pub unfairness_threshold: f64,
}

impl Default for ResamplingSettings {
    fn default() -> Self {
        ResamplingSettings {
            n_permutations: DEFAULT_PERMUTATIONS,
            n_bootstrap: DEFAULT_BOOTSTRAP,
            alpha: DEFAULT_ALPHA,
            unfairness_threshold: DEFAULT_UNFAIRNESS_THRESHOLD,
        }
    }
}

impl ResamplingSettings {
    pub fn validate(&self) -> Result<()> {
        if self.n_permutations == 0 {
            return Err(AuditError::config("at least one permutation is required"));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(AuditError::config(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        if !(self.unfairness_threshold >= 0.0 && self.unfairness_threshold.is_finite()) {
            return Err(AuditError::config(format!(
                "unfairness threshold must be a non-negative number, got {}",
                self.unfairness_threshold
            )));
        }
        Ok(())
    }
}

/// Statistic name to value; `None` marks an undefined statistic.
pub type StatMap = BTreeMap<String, Option<f64>>;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Stable seed for one iteration of one resampling stream.
pub fn derive_seed(master: u64, stream: &str, iteration: u64) -> u64 {
    // FNV-1a over the little-endian encoding of the triple, then a
    // splitmix64 finalizer for avalanche.
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0100_0000_01b3;
    let mut h = OFFSET;
    let mut feed = |bytes: &[u8]| {
        for &b in bytes {
            h ^= u64::from(b);
            h = h.wrapping_mul(PRIME);
        }
    };
    feed(&master.to_le_bytes());
    feed(&(stream.len() as u64).to_le_bytes());
    feed(stream.as_bytes());
    feed(&iteration.to_le_bytes());
    splitmix64(h)
}

pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Uniformly random reassignment of group labels to rows; group sizes are
/// preserved.
pub fn permute_groups(index: &GroupIndex, seed: u64) -> GroupIndex {
    let mut assignment = index.assignment().to_vec();
    assignment.shuffle(&mut rng_from_seed(seed));
    index.with_assignment(assignment)
}

/// `n` row indices drawn with replacement.
pub fn bootstrap_indices(n: usize, seed: u64) -> Vec<usize> {
    if n == 0 {
        return Vec::new();
    }
    let mut rng = rng_from_seed(seed);
    (0..n).map(|_| rng.random_range(0..n)).collect()
}

/// Nearest-rank quantile: the sorted sample at 1-based rank `ceil(q m)`,
/// with `q = 0` giving the minimum.
pub fn quantile(samples: &[f64], q: f64) -> Result<f64> {
    if samples.is_empty() {
        return Err(AuditError::numerical("quantile of an empty sample"));
    }
    if !(0.0..=1.0).contains(&q) {
        return Err(AuditError::config(format!("quantile level {q} outside [0, 1]")));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let m = sorted.len();
    let r = q * m as f64;
    // Snap products like 0.95 * 20 that land a hair above an integer.
    let r = if (r - r.round()).abs() < 1e-9 { r.round() } else { r };
    let rank = (r.ceil() as usize).clamp(1, m);
    Ok(sorted[rank - 1])
}

/// Exceedance of `observed` over the `(1 - alpha)` null quantile, floored at
/// zero.
pub fn u_value(observed: f64, null_samples: &[f64], alpha: f64) -> Result<f64> {
    let q = quantile(null_samples, 1.0 - alpha)?;
    Ok((observed - q).max(0.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NullDistribution {
    /// One sample per permutation for every statistic.
    pub samples: BTreeMap<String, Vec<f64>>,
    pub n_permutations: usize,
    pub master_seed: u64,
    /// Statistics left out because they were undefined in some permutation.
    pub dropped: Vec<String>,
}

fn run_iterations<F>(n: usize, master_seed: u64, stream: &str, f: F) -> Result<Vec<StatMap>>
where
    F: Fn(u64, usize) -> Result<StatMap> + Sync,
{
    (0..n)
        .into_par_iter()
        .map(|it| f(derive_seed(master_seed, stream, it as u64), it))
        .collect()
}

/// Runs `n_permutations` null iterations. `f(seed, iteration)` computes every
/// statistic for one permuted data set.
pub fn run_permutations<F>(
    n_permutations: usize,
    master_seed: u64,
    stream: &str,
    f: F,
) -> Result<NullDistribution>
where
    F: Fn(u64, usize) -> Result<StatMap> + Sync,
{
    if n_permutations == 0 {
        return Err(AuditError::config("at least one permutation is required"));
    }
    let iterations = run_iterations(n_permutations, master_seed, stream, f)?;
    let mut samples: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    let mut dropped = Vec::new();
    let names: std::collections::BTreeSet<&String> = iterations.iter().flat_map(|m| m.keys()).collect();
    for name in names {
        let values: Option<Vec<f64>> = iterations
            .iter()
            .map(|m| m.get(name).copied().flatten().filter(|v| v.is_finite()))
            .collect();
        match values {
            Some(v) => {
                samples.insert(name.clone(), v);
            }
            None => dropped.push(name.clone()),
        }
    }
    Ok(NullDistribution {
        samples,
        n_permutations,
        master_seed,
        dropped,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lower: f64,
    pub upper: f64,
    /// Resamples in which the statistic was defined.
    pub n_defined: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapResult {
    pub samples: BTreeMap<String, Vec<f64>>,
    /// Percentile intervals at level `1 - alpha`.
    pub intervals: BTreeMap<String, Interval>,
    pub n_resamples: usize,
    pub alpha: f64,
}

/// Runs `n_resamples` bootstrap iterations; `f(seed, iteration)` should draw
/// its rows with [`bootstrap_indices`] from `seed`.
pub fn run_bootstrap<F>(
    n_resamples: usize,
    master_seed: u64,
    stream: &str,
    alpha: f64,
    f: F,
) -> Result<BootstrapResult>
where
    F: Fn(u64, usize) -> Result<StatMap> + Sync,
{
    let iterations = run_iterations(n_resamples, master_seed, stream, f)?;
    let mut samples: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for m in &iterations {
        for (k, v) in m {
            let entry = samples.entry(k.clone()).or_default();
            if let Some(v) = v.filter(|v| v.is_finite()) {
                entry.push(v);
            }
        }
    }
    let mut intervals = BTreeMap::new();
    for (k, v) in &samples {
        if v.is_empty() {
            continue;
        }
        intervals.insert(
            k.clone(),
            Interval {
                lower: quantile(v, alpha / 2.0)?,
                upper: quantile(v, 1.0 - alpha / 2.0)?,
                n_defined: v.len(),
            },
        );
    }
    Ok(BootstrapResult {
        samples,
        intervals,
        n_resamples,
        alpha,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UValueRow {
    pub statistic: String,
    pub observed: f64,
    pub null_quantile: f64,
    pub u_value: f64,
    pub threshold: f64,
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UValueTable {
    pub alpha: f64,
    pub threshold: f64,
    pub rows: Vec<UValueRow>,
}

impl UValueTable {
    /// One row per statistic that is defined in the observed data and has a
    /// complete null sample.
    pub fn build(
        observed: &StatMap,
        null: &NullDistribution,
        alpha: f64,
        threshold: f64,
    ) -> Result<UValueTable> {
        let mut rows = Vec::new();
        for (name, obs) in observed {
            let (Some(obs), Some(samples)) = (obs, null.samples.get(name)) else {
                continue;
            };
            let q = quantile(samples, 1.0 - alpha)?;
            let u = (obs - q).max(0.0);
            rows.push(UValueRow {
                statistic: name.clone(),
                observed: *obs,
                null_quantile: q,
                u_value: u,
                threshold,
                flagged: u > threshold,
            });
        }
        Ok(UValueTable {
            alpha,
            threshold,
            rows,
        })
    }

    pub fn get(&self, statistic: &str) -> Option<&UValueRow> {
        self.rows.iter().find(|r| r.statistic == statistic)
    }
}

/// Runs `f` on a dedicated pool of `workers` threads (all cores when `None`).
pub fn with_workers<T, F>(workers: Option<usize>, f: F) -> Result<T>
where
    T: Send,
    F: FnOnce() -> T + Send,
{
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(w) = workers {
        builder = builder.num_threads(w.max(1));
    }
    let pool = builder
        .build()
        .map_err(|e| AuditError::config(format!("cannot start worker pool: {e}")))?;
    Ok(pool.install(f))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn seeds_are_stable_and_distinct() {
        assert_eq!(derive_seed(42, "perm", 0), derive_seed(42, "perm", 0));
        assert_ne!(derive_seed(42, "perm", 0), derive_seed(42, "perm", 1));
        assert_ne!(derive_seed(42, "perm", 0), derive_seed(42, "boot", 0));
        assert_ne!(derive_seed(42, "perm", 0), derive_seed(43, "perm", 0));
    }

    #[test]
    fn seed_value_is_platform_independent() {
        // Values from an independent re-implementation of FNV-1a + splitmix64.
        assert_eq!(derive_seed(42, "perm", 0), 16448339754280468444);
        assert_eq!(derive_seed(42, "boot", 3), 3900846571967607913);
        let mut set = std::collections::BTreeSet::new();
        for i in 0..10_000 {
            assert!(set.insert(derive_seed(7, "perm", i)));
        }
    }

    fn index(assign: Vec<usize>, k: usize) -> GroupIndex {
        GroupIndex::from_assignment(assign, (0..k).map(|g| format!("g{g}")).collect()).unwrap()
    }

    #[test]
    fn permutation_keeps_counts() {
        let idx = index(vec![0, 0, 1, 2, 2, 2, 1, 0], 3);
        for s in 0..20 {
            let p = permute_groups(&idx, s);
            assert_eq!(p.counts(), idx.counts());
            assert_eq!(p.labels(), idx.labels());
        }
        let one = index(vec![0], 1);
        assert_eq!(permute_groups(&one, 9), one);
    }

    #[test]
    fn permutations_are_uniform() {
        // Four distinct rows: 24 arrangements, each expected 10000/24 times.
        let idx = index(vec![0, 1, 2, 3], 4);
        let mut freq: BTreeMap<Vec<usize>, usize> = BTreeMap::new();
        let trials = 10_000;
        for t in 0..trials {
            let p = permute_groups(&idx, derive_seed(1, "uniformity", t));
            *freq.entry(p.assignment().to_vec()).or_default() += 1;
        }
        assert_eq!(freq.len(), 24);
        let p = 1.0 / 24.0;
        let mean = trials as f64 * p;
        let sd = (trials as f64 * p * (1.0 - p)).sqrt();
        let mut chi2 = 0.0;
        for &c in freq.values() {
            assert!((c as f64 - mean).abs() < 3.0 * sd + 1.0, "count {c} vs {mean}");
            chi2 += (c as f64 - mean).powi(2) / mean;
        }
        // 23 degrees of freedom; 99.9th percentile is about 49.7.
        assert!(chi2 < 49.7, "chi-square {chi2}");
    }

    #[test]
    fn bootstrap_basics() {
        assert_eq!(bootstrap_indices(1, 5), vec![0]);
        assert_eq!(bootstrap_indices(50, 5), bootstrap_indices(50, 5));
        assert_ne!(bootstrap_indices(50, 5), bootstrap_indices(50, 6));
    }

    #[test]
    fn mean_multiplicity_is_one() {
        // Average multiplicity of the first half of the rows; each row has
        // expectation 1 and the average has standard error ~0.003 here.
        let n = 100;
        let reps = 2000;
        let mut hits = 0usize;
        for r in 0..reps {
            hits += bootstrap_indices(n, derive_seed(11, "boot", r)).iter().filter(|&&i| i < n / 2).count();
        }
        let mean = hits as f64 / (reps as f64 * (n / 2) as f64);
        assert!((mean - 1.0).abs() < 0.01, "{mean}");
    }

    #[test]
    fn quantile_examples() {
        let s = [3.0, 1.0, 5.0, 2.0, 4.0];
        assert_eq!(quantile(&s, 0.95).unwrap(), 5.0);
        assert_eq!(quantile(&s, 0.0).unwrap(), 1.0);
        let grid: Vec<f64> = (0..=10).map(|i| f64::from(i) / 100.0).collect();
        assert_eq!(quantile(&grid, 0.95).unwrap(), 0.10);
        let twenty: Vec<f64> = (1..=20).map(f64::from).collect();
        assert_eq!(quantile(&twenty, 0.95).unwrap(), 19.0);
        assert!(quantile(&[], 0.5).is_err());
    }

    #[test]
    fn u_value_examples() {
        let grid: Vec<f64> = (0..=10).map(|i| f64::from(i) / 100.0).collect();
        assert_eq!(u_value(-1.0, &grid, 0.05).unwrap(), 0.0);
        assert_eq!(u_value(0.10, &grid, 0.05).unwrap(), 0.0);
        assert!((u_value(0.25, &grid, 0.05).unwrap() - 0.15).abs() < 1e-15);
    }

    #[test]
    fn permutation_runs_are_schedule_independent() {
        let idx = index((0..40).map(|i| i % 4).collect(), 4);
        let stat = |seed: u64, _it: usize| -> Result<StatMap> {
            let p = permute_groups(&idx, seed);
            let s: usize = p.assignment().iter().enumerate().map(|(i, g)| i * g).sum();
            Ok(BTreeMap::from([("s".to_string(), Some(s as f64))]))
        };
        let a = with_workers(Some(1), || run_permutations(50, 9, "perm", stat)).unwrap().unwrap();
        let b = with_workers(Some(4), || run_permutations(50, 9, "perm", stat)).unwrap().unwrap();
        assert_eq!(a, b);
        assert!(run_permutations(0, 9, "perm", stat).is_err());
    }

    #[test]
    fn undefined_statistics_are_dropped() {
        let null = run_permutations(5, 1, "p", |_, it| {
            Ok(BTreeMap::from([
                ("ok".to_string(), Some(1.0)),
                ("flaky".to_string(), if it == 3 { None } else { Some(0.5) }),
            ]))
        })
        .unwrap();
        assert_eq!(null.samples.len(), 1);
        assert_eq!(null.dropped, vec!["flaky".to_string()]);
    }

    #[test]
    fn table_flags_match_threshold() {
        let null = NullDistribution {
            samples: BTreeMap::from([
                ("a".to_string(), vec![0.0; 10]),
                ("b".to_string(), vec![0.0; 10]),
            ]),
            n_permutations: 10,
            master_seed: 0,
            dropped: vec![],
        };
        let obs = BTreeMap::from([("a".to_string(), Some(0.1)), ("b".to_string(), Some(0.1000001))]);
        let t = UValueTable::build(&obs, &null, 0.05, 0.1).unwrap();
        assert!(!t.get("a").unwrap().flagged);
        assert!(t.get("b").unwrap().flagged);
    }

    proptest! {
        #[test]
        fn u_value_monotone(null in proptest::collection::vec(-1.0f64..1.0, 1..30), a in -2.0f64..2.0, b in -2.0f64..2.0, bump in 0.0f64..1.0, which in 0usize..30) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(u_value(lo, &null, 0.05).unwrap() <= u_value(hi, &null, 0.05).unwrap());
            let mut raised = null.clone();
            let k = which % raised.len();
            raised[k] += bump;
            prop_assert!(u_value(a, &raised, 0.05).unwrap() <= u_value(a, &null, 0.05).unwrap());
        }

        #[test]
        fn u_value_of_self_is_zero(x in -5.0f64..5.0, alpha in 0.0f64..1.0) {
            prop_assert_eq!(u_value(x, &[x], alpha).unwrap(), 0.0);
        }

        #[test]
        fn permutation_preserves_label_multiset(assign in proptest::collection::vec(0usize..5, 1..50), seed in any::<u64>()) {
            let idx = index(assign.clone(), 5);
            let p = permute_groups(&idx, seed);
            let mut a = assign;
            let mut b = p.assignment().to_vec();
            a.sort_unstable();
            b.sort_unstable();
            prop_assert_eq!(a, b);
        }
    }
}
