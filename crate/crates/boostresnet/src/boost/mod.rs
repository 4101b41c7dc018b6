//! Telescoping-sum boosting: the sequential block-by-block training loop,
//! in binary and multiclass variants, with per-round metrics.

pub mod binary;
mod metrics;
pub mod multiclass;

pub use binary::{
    alpha_from_edge, alpha_line_search, boost_round, edge, gamma_t, train_binary,
    weak_module_value, z_and_reweight, AlphaOutcome, BinaryState, HypothesisModule, LabelsBinary,
    ReweightOutcome, RoundOutput,
};
pub use metrics::{parse_rounds_csv, rounds_csv, RoundRecord, TimingMode, ROUNDS_SCHEMA_BINARY,
    ROUNDS_SCHEMA_MULTICLASS};
pub use multiclass::{
    cost_matrix, exp_loss_multiclass, multiclass_edge, train_multiclass, CostMatrix, ScoreState,
    SimplexHypothesis,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::resnet::{AuxRound, TrainedResNet};

/// How alpha_{t+1} is chosen each round: the exact minimizer of Z_t located
/// by golden-section line search, or the closed form 0.5 ln((1+g)/(1-g))
/// that the training-error bound analyzes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlphaMode {
    LineSearch,
    ClosedForm,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoostConfig {
    /// Maximum number of residual blocks (the loop also runs round 0, which
    /// trains only the initial linear classifier on raw features).
    pub t_max: usize,
    /// Stop once the per-round improvement gamma_t stays below this for
    /// `patience` consecutive block rounds.
    pub gamma_threshold: f64,
    pub patience: usize,
    pub alpha_mode: AlphaMode,
    /// Hidden width of each block.
    pub k: usize,
}

impl Default for BoostConfig {
    fn default() -> Self {
        BoostConfig {
            t_max: 10,
            gamma_threshold: 0.001,
            patience: 3,
            alpha_mode: AlphaMode::LineSearch,
            k: 8,
        }
    }
}

impl BoostConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.gamma_threshold.is_finite() || self.gamma_threshold < 0.0 {
            return Err(Error::Config(format!(
                "boost.gamma_threshold must be a finite value >= 0, got {}",
                self.gamma_threshold
            )));
        }
        if self.patience == 0 {
            return Err(Error::Config("boost.patience must be >= 1".into()));
        }
        Ok(())
    }
}

/// Everything a completed training run produces: the assembled network, the
/// per-round metric records, the full auxiliary-classifier history (for the
/// telescoping identity), and the runtime invariant drifts.
#[derive(Debug, Clone)]
pub struct BoostRun {
    pub net: TrainedResNet,
    pub rounds: Vec<RoundRecord>,
    pub history: Vec<AuxRound>,
    pub stopped_early: bool,
    pub diagnostics: RunDiagnostics,
}

#[derive(Debug, Clone)]
pub struct RunDiagnostics {
    /// Binary: max relative deviation of D_t from its closed form
    /// exp(-y alpha_t o_t) / Z. Multiclass: max relative deviation of the
    /// accumulated state from alpha_{t+1} o_{t+1}.
    pub max_state_drift: f64,
    /// Telescoping identity discrepancy measured on up to 256 training rows.
    pub telescoping_discrepancy: f64,
    /// Multiclass only: max over rounds and examples of |cost row sum|
    /// relative to the row's true-class magnitude (zero for binary runs).
    pub max_cost_row_sum: f64,
}

#[derive(Debug, Clone)]
pub struct WeakLearningRow {
    pub round: usize,
    pub gamma: f64,
    pub satisfied: bool,
    pub covariance: Option<f64>,
}

/// Per-round normalized improvement against a threshold, from the recorded
/// edge sequence (which starts with the implicit edge 0 of the zero
/// hypothesis). Covariances, when supplied, are attached for reporting; the
/// condition itself is never enforced.
pub fn weak_learning_check(
    edges: &[f64],
    threshold: f64,
    covariances: Option<&[f64]>,
) -> Result<Vec<WeakLearningRow>> {
    if edges.len() < 2 {
        return Err(Error::State(format!(
            "weak-learning check needs at least 2 recorded edges, got {}",
            edges.len()
        )));
    }
    let mut rows = Vec::with_capacity(edges.len() - 1);
    for (t, pair) in edges.windows(2).enumerate() {
        let gamma = binary::gamma_t(pair[1], pair[0])?;
        rows.push(WeakLearningRow {
            round: t,
            gamma,
            satisfied: gamma >= threshold,
            covariance: covariances.and_then(|c| c.get(t).copied()),
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weak_learning_examples() {
        let rows = weak_learning_check(&[0.0, 0.5], 0.4, None).unwrap();
        assert_eq!(rows.len(), 1);
        assert!((rows[0].gamma - 0.5).abs() < 1e-15);
        assert!(rows[0].satisfied);

        let rows = weak_learning_check(&[0.0, 0.6, 0.6], 0.01, None).unwrap();
        assert_eq!(rows[1].gamma, 0.0);
        assert!(!rows[1].satisfied);

        let rows = weak_learning_check(&[0.0, 0.6, 0.8], 0.7, None).unwrap();
        assert!((rows[1].gamma - 0.661_437_827_766_147_9).abs() < 1e-12);
        assert!(!rows[1].satisfied);
    }

    #[test]
    fn too_few_edges_is_a_state_error() {
        assert!(weak_learning_check(&[0.5], 0.1, None).is_err());
    }
}
