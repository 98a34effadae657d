use serde::{Deserialize, Serialize};

use crate::error::{AuditError, Result};

/// How scores become binary labels: `label = 1{score >= t}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum ThresholdPolicy {
    Fixed { value: f64 },
    /// Threshold maximizing Youden's J = TPR - FPR on reference data.
    Youden,
}

impl Default for ThresholdPolicy {
    fn default() -> Self {
        ThresholdPolicy::Fixed { value: 0.5 }
    }
}

impl ThresholdPolicy {
    pub fn validate(&self) -> Result<()> {
        match *self {
            ThresholdPolicy::Fixed { value } if !(value > 0.0 && value < 1.0) => Err(
                AuditError::config(format!("fixed threshold must lie in (0, 1), got {value}")),
            ),
            _ => Ok(()),
        }
    }

    /// Concrete threshold, using `scores`/`y` only for the Youden rule.
    pub fn resolve(&self, scores: &[f64], y: &[u8]) -> Result<f64> {
        self.validate()?;
        match *self {
            ThresholdPolicy::Fixed { value } => Ok(value),
            ThresholdPolicy::Youden => youden_threshold(scores, y).map(|r| r.threshold),
        }
    }
}

pub fn apply_threshold(scores: &[f64], threshold: f64) -> Vec<u8> {
    scores.iter().map(|&s| u8::from(s >= threshold)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct YoudenThreshold {
    pub threshold: f64,
    pub j: f64,
}

/// Youden's J at threshold `t`.
pub fn youden_j(scores: &[f64], y: &[u8], t: f64) -> f64 {
    let (mut tp, mut fp, mut pos, mut neg) = (0usize, 0usize, 0usize, 0usize);
    for (&s, &label) in scores.iter().zip(y) {
        if label == 1 {
            pos += 1;
            tp += usize::from(s >= t);
        } else {
            neg += 1;
            fp += usize::from(s >= t);
        }
    }
    tp as f64 / pos as f64 - fp as f64 / neg as f64
}

/// Scans the candidate thresholds `{0} ∪ midpoints of adjacent distinct
/// scores ∪ {1}` and returns the one with the largest J, smallest on ties.
pub fn youden_threshold(scores: &[f64], y: &[u8]) -> Result<YoudenThreshold> {
    if scores.len() != y.len() {
        return Err(AuditError::data("scores and labels differ in length"));
    }
    let pos = y.iter().filter(|&&v| v == 1).count();
    let neg = y.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(AuditError::data("Youden threshold needs both outcome classes"));
    }
    let mut pairs: Vec<(f64, u8)> = scores.iter().copied().zip(y.iter().copied()).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));

    // Sweep upward: at a candidate t, rows with score >= t are positive.
    let (pos_f, neg_f) = (pos as f64, neg as f64);
    let mut best = YoudenThreshold {
        threshold: 0.0,
        j: youden_j(scores, y, 0.0),
    };
    let mut tp = pairs.iter().filter(|p| p.1 == 1).count();
    let mut fp = pairs.len() - tp;
    let mut i = 0;
    while i < pairs.len() {
        let v = pairs[i].0;
        while i < pairs.len() && pairs[i].0 == v {
            if pairs[i].1 == 1 {
                tp -= 1;
            } else {
                fp -= 1;
            }
            i += 1;
        }
        if i == pairs.len() {
            break;
        }
        let t = 0.5 * (v + pairs[i].0);
        let j = tp as f64 / pos_f - fp as f64 / neg_f;
        if j > best.j {
            best = YoudenThreshold { threshold: t, j };
        }
    }
    let j_one = youden_j(scores, y, 1.0);
    if j_one > best.j {
        best = YoudenThreshold {
            threshold: 1.0,
            j: j_one,
        };
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Exhaustive oracle: evaluate every candidate with a full pass.
    fn brute_force(scores: &[f64], y: &[u8]) -> YoudenThreshold {
        let mut distinct: Vec<f64> = scores.to_vec();
        distinct.sort_by(f64::total_cmp);
        distinct.dedup();
        let mut candidates = vec![0.0];
        candidates.extend(distinct.windows(2).map(|w| 0.5 * (w[0] + w[1])));
        candidates.push(1.0);
        candidates.sort_by(f64::total_cmp);
        let mut best = YoudenThreshold {
            threshold: f64::NAN,
            j: f64::NEG_INFINITY,
        };
        for t in candidates {
            let j = youden_j(scores, y, t);
            if j > best.j {
                best = YoudenThreshold { threshold: t, j };
            }
        }
        best
    }

    #[test]
    fn separated_scores() {
        let r = youden_threshold(&[0.1, 0.2, 0.8, 0.9], &[0, 0, 1, 1]).unwrap();
        assert_eq!(r.threshold, 0.5);
        assert_eq!(r.j, 1.0);
    }

    #[test]
    fn constant_scores_return_smallest_candidate() {
        let r = youden_threshold(&[0.4; 5], &[0, 1, 0, 1, 1]).unwrap();
        assert_eq!(r.threshold, 0.0);
        assert_eq!(r.j, 0.0);
    }

    #[test]
    fn single_class_is_error() {
        assert!(youden_threshold(&[0.1, 0.2], &[1, 1]).is_err());
    }

    #[test]
    fn ten_rows_match_brute_force() {
        let scores = [0.62, 0.13, 0.48, 0.91, 0.48, 0.27, 0.75, 0.05, 0.33, 0.58];
        let y = [1, 0, 1, 1, 0, 0, 1, 0, 1, 0];
        let fast = youden_threshold(&scores, &y).unwrap();
        let slow = brute_force(&scores, &y);
        assert_eq!(fast, slow);
        // Hand tally: the split between 0.27 and 0.33 keeps all 5 positives
        // and 2/5 negatives above, J = 0.6; the 0.58/0.62 split ties and loses
        // on the smallest-threshold rule.
        assert_eq!(fast.threshold, 0.5 * (0.27 + 0.33));
        assert!((fast.j - 0.6).abs() < 1e-12);
    }

    #[test]
    fn fixed_policy_validates() {
        assert!(ThresholdPolicy::Fixed { value: 1.0 }.validate().is_err());
        assert_eq!(ThresholdPolicy::default().resolve(&[], &[]).unwrap(), 0.5);
        assert_eq!(apply_threshold(&[0.5, 0.49, 0.51], 0.5), vec![1, 0, 1]);
    }

    proptest! {
        #[test]
        fn sweep_matches_brute_force(rows in proptest::collection::vec((0u8..20, 0u8..2), 2..40)) {
            let scores: Vec<f64> = rows.iter().map(|r| f64::from(r.0) / 20.0 + 0.01).collect();
            let y: Vec<u8> = rows.iter().map(|r| r.1).collect();
            prop_assume!(y.contains(&0) && y.contains(&1));
            prop_assert_eq!(youden_threshold(&scores, &y).unwrap(), brute_force(&scores, &y));
        }

        #[test]
        fn split_invariant_under_monotone_transform(rows in proptest::collection::vec((0.001f64..0.999, 0u8..2), 2..40)) {
            let scores: Vec<f64> = rows.iter().map(|r| r.0).collect();
            let y: Vec<u8> = rows.iter().map(|r| r.1).collect();
            prop_assume!(y.contains(&0) && y.contains(&1));
            let squashed: Vec<f64> = scores.iter().map(|s| s * s).collect();
            let a = youden_threshold(&scores, &y).unwrap();
            let b = youden_threshold(&squashed, &y).unwrap();
            prop_assert_eq!(apply_threshold(&scores, a.threshold), apply_threshold(&squashed, b.threshold));
        }
    }
}
