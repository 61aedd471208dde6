//! Trajectory-based difficulty scoring for gradient-boosted tree ensembles.
//!
//! The pipeline runs in four stages:
//!
//! 1. [`gbm`] trains a boosted ensemble and exposes the cumulative output
//!    after every tree.
//! 2. [`trajectory`] turns each sample's cumulative outputs into a fixed-length
//!    vector of interpretable descriptors (spread, oscillation, head/tail trends).
//! 3. [`tds`] fits a small regressor from descriptors to held-out loss and
//!    calibrates its output with an empirical CDF, giving a score in `[0, 1]`.
//! 4. Downstream harnesses consume the score: [`al`] (active learning),
//!    [`selective`] (risk-coverage), [`conformal`] (difficulty-stratified
//!    conformal prediction) and [`explain`] (SHAP-based failure segments).

pub mod al;
pub mod conformal;
pub mod dataset;
pub mod error;
pub mod explain;
pub mod gbm;
pub mod metrics;
pub mod selective;
pub mod tds;
pub mod trajectory;

mod rng;

pub use error::{Result, TdsError};

/// Learning task shared by datasets, ensembles and downstream harnesses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Regression,
    BinaryClassification,
}

impl std::fmt::Display for Task {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Task::Regression => f.write_str("regression"),
            Task::BinaryClassification => f.write_str("binary_classification"),
        }
    }
}

/// Numerically stable logistic function.
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Logistic loss of margin `z` against label `y ∈ {0, 1}`, computed as
/// `softplus(z) - y·z`.
pub fn logistic_loss(z: f64, y: f64) -> f64 {
    let softplus = if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    };
    softplus - y * z
}

/// Per-sample loss for the given task: squared error or logistic loss on the margin.
pub fn sample_loss(task: Task, output: f64, y: f64) -> f64 {
    match task {
        Task::Regression => (output - y) * (output - y),
        Task::BinaryClassification => logistic_loss(output, y),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn logistic_loss_matches_direct_formula() {
        for &z in &[-30.0, -2.5, -0.1, 0.0, 0.7, 4.0, 25.0] {
            for &y in &[0.0, 1.0] {
                let direct = (1.0 + f64::exp(z)).ln() - y * z;
                assert!((logistic_loss(z, y) - direct).abs() < 1e-9, "z={z} y={y}");
            }
        }
    }

    #[test]
    fn sigmoid_is_stable_at_extremes() {
        assert_eq!(sigmoid(-1000.0), 0.0);
        assert_eq!(sigmoid(1000.0), 1.0);
        assert_eq!(sigmoid(0.0), 0.5);
    }
}
