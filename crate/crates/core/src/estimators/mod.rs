//! Built-in probabilistic classifiers, thresholding and class-imbalance
//! handling.

mod imbalance;
mod logistic;
mod multiclass;
mod threshold;

pub use imbalance::{apply_imbalance, class_weights, Balanced, ImbalanceMode, ImbalancePolicy};
pub use logistic::{
    fit_logistic, fit_logistic_traced, logit, predict_proba, sigmoid, FitSettings, LogisticModel,
    LogisticObjective, PROB_EPS,
};
pub use multiclass::{fit_multiclass, fit_propensity, MulticlassModel};
pub use threshold::{apply_threshold, youden_j, youden_threshold, ThresholdPolicy, YoudenThreshold};

use nalgebra::DMatrix;

/// `[X | 1{g = 1} .. 1{g = k-1}]`: covariates followed by reference-coded
/// group indicators (group 0 is the reference).
pub fn with_group_indicators(x: &DMatrix<f64>, assignment: &[usize], k: usize) -> DMatrix<f64> {
    let (n, p) = x.shape();
    let extra = k.saturating_sub(1);
    let mut out = DMatrix::zeros(n, p + extra);
    out.columns_mut(0, p).copy_from(x);
    for (i, &g) in assignment.iter().enumerate() {
        if g > 0 {
            out[(i, p + g - 1)] = 1.0;
        }
    }
    out
}
