use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImbalanceMode {
    #[default]
    None,
    /// Observation weights `n / (2 n_class)`.
    ClassWeight,
    /// Duplicate minority-class rows (with replacement) until classes match.
    UpsampleMinority,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ImbalancePolicy {
    pub mode: ImbalanceMode,
    pub seed: u64,
}

/// Training data after the imbalance policy: possibly enlarged rows, possibly
/// per-row weights.
#[derive(Debug, Clone)]
pub struct Balanced {
    pub dataset: Dataset,
    pub weights: Option<Vec<f64>>,
    /// Source row (into the input) of every output row.
    pub rows: Vec<usize>,
}

pub fn class_weights(y: &[u8]) -> Vec<f64> {
    let n = y.len() as f64;
    let pos = y.iter().filter(|&&v| v == 1).count() as f64;
    let neg = n - pos;
    y.iter()
        .map(|&v| n / (2.0 * if v == 1 { pos } else { neg }))
        .collect()
}

pub fn apply_imbalance(train: &Dataset, policy: &ImbalancePolicy) -> Balanced {
    match policy.mode {
        ImbalanceMode::None => Balanced {
            dataset: train.clone(),
            weights: None,
            rows: (0..train.n()).collect(),
        },
        ImbalanceMode::ClassWeight => Balanced {
            dataset: train.clone(),
            weights: Some(class_weights(train.outcome())),
            rows: (0..train.n()).collect(),
        },
        ImbalanceMode::UpsampleMinority => {
            let y = train.outcome();
            let pos: Vec<usize> = (0..y.len()).filter(|&i| y[i] == 1).collect();
            let neg: Vec<usize> = (0..y.len()).filter(|&i| y[i] == 0).collect();
            let (minority, majority) = if pos.len() < neg.len() { (pos, neg) } else { (neg, pos) };
            let deficit = majority.len() - minority.len();
            if minority.is_empty() || deficit == 0 {
                return Balanced {
                    dataset: train.clone(),
                    weights: None,
                    rows: (0..train.n()).collect(),
                };
            }
            let mut rng = ChaCha8Rng::seed_from_u64(policy.seed);
            let mut rows: Vec<usize> = (0..y.len()).collect();
            rows.extend((0..deficit).map(|_| minority[rng.random_range(0..minority.len())]));
            Balanced {
                dataset: train.select(&rows),
                weights: None,
                rows,
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    fn ds(y: Vec<u8>) -> Dataset {
        let n = y.len();
        Dataset::new(DMatrix::from_fn(n, 1, |i, _| i as f64), vec!["x".into()], y).unwrap()
    }

    #[test]
    fn balanced_class_weights_are_one() {
        assert_eq!(class_weights(&[0, 1, 1, 0]), vec![1.0; 4]);
    }

    #[test]
    fn upsampling_equalizes_classes() {
        let y: Vec<u8> = (0..100).map(|i| u8::from(i < 10)).collect();
        let b = apply_imbalance(
            &ds(y),
            &ImbalancePolicy {
                mode: ImbalanceMode::UpsampleMinority,
                seed: 3,
            },
        );
        let pos = b.dataset.outcome().iter().filter(|&&v| v == 1).count();
        assert_eq!(pos, 90);
        assert_eq!(b.dataset.n(), 180);
        // Original rows come first and are untouched.
        assert_eq!(b.dataset.features()[(50, 0)], 50.0);
        // Added rows are all minority duplicates.
        assert!(b.dataset.outcome()[100..].iter().all(|&v| v == 1));
    }

    #[test]
    fn none_is_identity() {
        let d = ds(vec![0, 1, 1]);
        let b = apply_imbalance(&d, &ImbalancePolicy::default());
        assert_eq!(b.dataset, d);
        assert!(b.weights.is_none());
    }

    #[test]
    fn class_weight_inverse_frequency() {
        let w = class_weights(&[1, 0, 0, 0]);
        assert_eq!(w, vec![2.0, 4.0 / 6.0, 4.0 / 6.0, 4.0 / 6.0]);
    }
}
