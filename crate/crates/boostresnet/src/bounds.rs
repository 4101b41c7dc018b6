//! Computable diagnostics: training-error bounds, the margin distribution
//! with its two bound forms, and the l1-path-norm generalization bound.
//!
//! Bounds are reported as computed, including when they exceed 1; a vacuous
//! bound is itself a diagnostic at desk scale.

use serde::Serialize;

use crate::boost::{BoostRun, RoundRecord};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::resnet::{FinalClassifier, TrainedResNet};

/// Both forms of the training-error bound from the per-round improvements:
/// the product of sqrt(1 - gamma_t^2) (tighter) and exp(-0.5 sum of
/// max(gamma_t, 0)^2).
#[derive(Debug, Clone, Copy, Serialize)]
pub struct TrainingErrorBound {
    pub prod_form: f64,
    pub exp_form: f64,
}

pub fn training_error_bound(gammas: &[f64]) -> TrainingErrorBound {
    let prod_form = gammas
        .iter()
        .map(|g| (1.0 - g * g).max(0.0).sqrt())
        .product();
    let exp_form = (-0.5 * gammas.iter().map(|g| g.max(0.0).powi(2)).sum::<f64>()).exp();
    TrainingErrorBound {
        prod_form,
        exp_form,
    }
}

/// Classification margins of a trained network on a dataset. Binary: y F(x)
/// with y in {-1, +1}. Multiclass: true-class score minus best other score.
pub fn margins(net: &TrainedResNet, data: &Dataset) -> Result<Vec<f64>> {
    (0..data.m())
        .map(|i| net.margin(data.x.row(i), data.y[i]))
        .collect()
}

/// Fraction of margins <= theta for each theta (boundary ties count).
pub fn margin_fractions(margins: &[f64], thetas: &[f64]) -> Vec<f64> {
    let m = margins.len() as f64;
    thetas
        .iter()
        .map(|&t| margins.iter().filter(|&&v| v <= t).count() as f64 / m)
        .collect()
}

/// Closed-form margin-fraction bound
/// (1 + 2/(1/edge_final - 1))^(theta/2) * exp(-0.5 sum gamma^2).
pub fn margin_fraction_bound(theta: f64, edge_final: f64, gammas: &[f64]) -> Result<f64> {
    if !(0.0..1.0).contains(&edge_final) || edge_final == 0.0 {
        return Err(Error::State(format!(
            "margin_fraction_bound: final edge {edge_final} outside (0, 1)"
        )));
    }
    let first = (1.0 + 2.0 / (1.0 / edge_final - 1.0)).powf(theta / 2.0);
    let sum_sq: f64 = gammas.iter().map(|g| g.max(0.0).powi(2)).sum();
    Ok(first * (-0.5 * sum_sq).exp())
}

/// The exact proof-chain bound exp(theta * alpha_final) * prod Z_t, using
/// the recorded round history.
pub fn margin_fraction_bound_exact(theta: f64, alpha_final: f64, z_product: f64) -> f64 {
    (theta * alpha_final).exp() * z_product
}

#[derive(Debug, Clone, Serialize)]
pub struct MarginReport {
    pub thetas: Vec<f64>,
    pub fractions: Vec<f64>,
    /// Closed-form bound per theta (absent when the final edge is outside
    /// (0,1), e.g. a nonpositive-edge run).
    pub margin_bound: Vec<Option<f64>>,
    /// Exact bound exp(theta alpha_{T+1}) * prod Z per theta.
    pub margin_bound_exact: Vec<f64>,
    pub min_margin: f64,
    pub median_margin: f64,
}

/// Empirical margin CDF at the given thetas plus both bound forms from the
/// run history.
pub fn margin_report(
    net: &TrainedResNet,
    data: &Dataset,
    thetas: &[f64],
    run: &BoostRun,
) -> Result<MarginReport> {
    let mv = margins(net, data)?;
    let fractions = margin_fractions(&mv, thetas);
    let last = run
        .rounds
        .last()
        .ok_or_else(|| Error::State("margin_report: empty run".into()))?;
    let gammas: Vec<f64> = run.rounds.iter().map(|r| r.gamma).collect();
    let margin_bound = thetas
        .iter()
        .map(|&t| margin_fraction_bound(t, last.edge, &gammas).ok())
        .collect();
    let margin_bound_exact = thetas
        .iter()
        .map(|&t| margin_fraction_bound_exact(t, last.alpha, last.z_product))
        .collect();

    let mut sorted = mv.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let min_margin = sorted[0];
    let median_margin = if sorted.len() % 2 == 1 {
        sorted[sorted.len() / 2]
    } else {
        0.5 * (sorted[sorted.len() / 2 - 1] + sorted[sorted.len() / 2])
    };
    Ok(MarginReport {
        thetas: thetas.to_vec(),
        fractions,
        margin_bound,
        margin_bound_exact,
        min_margin,
        median_margin,
    })
}

/// Per-block l1 width measured on trained weights: the max over output
/// units of the incoming-weight l1 norm, taken on each weight matrix
/// separately and composed as their product, plus 1 for the identity path.
pub fn block_lambda(block: &crate::resnet::ResidualBlock) -> f64 {
    // Unit r of the hidden layer reads column r of w_in; channel j of the
    // module output reads column j of w_out (both stored input-major).
    let w_in_l1 = block.w_in().max_col_l1();
    let w_out_l1 = block.w_out().max_col_l1();
    1.0 + w_in_l1 * w_out_l1
}

#[derive(Debug, Clone, Serialize)]
pub struct BoundTerms {
    pub theta: f64,
    pub margin_term: f64,
    pub complexity_term: f64,
    pub log_t_term: f64,
    pub beta_term: f64,
    pub total: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ComplexityReport {
    pub r_inf: f64,
    /// Per-level widths Lambda_{t,t-1}; index 0 is the identity embedding.
    pub lambda_blocks: Vec<f64>,
    /// Path products Lambda_t = prod 2 Lambda_{t',t'-1}.
    pub lambda_paths: Vec<f64>,
    /// l1 norm of the final classifier.
    pub c0: f64,
    pub terms: Vec<BoundTerms>,
    pub n: usize,
    pub m: usize,
    pub t: usize,
    pub delta: f64,
}

/// The l1-path-norm generalization bound, assembled from measured weight
/// norms. Requires theta > 0, delta in (0,1), and depth >= 2 (the log T
/// term), and theta^2 m > log T so the beta term is real.
pub fn generalization_bound(
    net: &TrainedResNet,
    data: &Dataset,
    thetas: &[f64],
    delta: f64,
) -> Result<ComplexityReport> {
    let t = net.blocks.len();
    let m = data.m();
    let n = net.n;
    if t < 2 {
        return Err(Error::Config(format!(
            "generalization bound needs depth >= 2, got {t}"
        )));
    }
    if !(0.0..1.0).contains(&delta) || delta == 0.0 {
        return Err(Error::Config(format!("delta {delta} outside (0, 1)")));
    }
    let log_t = (t as f64).ln();
    let mf = m as f64;

    let c0 = match &net.final_classifier {
        FinalClassifier::Binary(w) => w.l1_norm(),
        FinalClassifier::Multiclass(w) => w.max_col_l1(),
    };
    let r_inf = data.r_inf();

    // Level 0 is the identity embedding of the inputs: width 1.
    let mut lambda_blocks = vec![1.0];
    lambda_blocks.extend(net.blocks.iter().map(block_lambda));
    let mut lambda_paths = Vec::with_capacity(lambda_blocks.len());
    let mut acc = 1.0;
    for lb in &lambda_blocks {
        acc *= 2.0 * lb;
        lambda_paths.push(acc);
    }
    let lambda_sum: f64 = lambda_paths.iter().sum();

    let mv = margins(net, data)?;
    let mut terms = Vec::with_capacity(thetas.len());
    for &theta in thetas {
        if theta <= 0.0 {
            return Err(Error::Config(format!("theta must be > 0, got {theta}")));
        }
        let inner = theta * theta * mf / log_t;
        if inner <= 1.0 {
            return Err(Error::Config(format!(
                "theta^2 m = {} does not exceed log T = {log_t}; increase theta or m",
                theta * theta * mf
            )));
        }
        let margin_term = margin_fractions(&mv, &[theta])[0];
        let complexity_term =
            4.0 * c0 * r_inf / theta * ((2.0 * n as f64).ln() / (2.0 * mf)).sqrt() * lambda_sum;
        let log_t_term = 2.0 / theta * (log_t / mf).sqrt();
        let beta_term =
            ((4.0 / (theta * theta) * inner.ln()).ceil() * log_t / mf + (2.0 / delta).ln() / (2.0 * mf))
                .sqrt();
        terms.push(BoundTerms {
            theta,
            margin_term,
            complexity_term,
            log_t_term,
            beta_term,
            total: margin_term + complexity_term + log_t_term + beta_term,
        });
    }

    Ok(ComplexityReport {
        r_inf,
        lambda_blocks,
        lambda_paths,
        c0,
        terms,
        n,
        m,
        t,
        delta,
    })
}

/// The full diagnostics document written next to a trained run.
#[derive(Debug, Clone, Serialize)]
pub struct BoundsReport {
    pub margin_report: MarginReport,
    pub complexity_report: Option<ComplexityReport>,
    pub training_error_bound: TrainingErrorBound,
    pub per_round: PerRound,
}

#[derive(Debug, Clone, Serialize)]
pub struct PerRound {
    pub gamma: Vec<f64>,
    pub z: Vec<f64>,
}

pub fn bounds_report(
    net: &TrainedResNet,
    data: &Dataset,
    run: &BoostRun,
    thetas: &[f64],
    delta: f64,
) -> Result<BoundsReport> {
    let gammas: Vec<f64> = run.rounds.iter().map(|r| r.gamma).collect();
    let zs: Vec<f64> = run.rounds.iter().map(|r| r.z).collect();
    // The complexity report needs depth >= 2 and theta^2 m > log T; shallow
    // or tiny runs simply omit it.
    let positive_thetas: Vec<f64> = thetas.iter().copied().filter(|&t| t > 0.0).collect();
    let complexity_report = if net.blocks.len() >= 2 && !positive_thetas.is_empty() {
        generalization_bound(net, data, &positive_thetas, delta).ok()
    } else {
        None
    };
    Ok(BoundsReport {
        margin_report: margin_report(net, data, thetas, run)?,
        complexity_report,
        training_error_bound: training_error_bound(&gammas),
        per_round: PerRound { gamma: gammas, z: zs },
    })
}

/// The 0-1 training error with boundary ties counted as errors; used by the
/// bound-chain checks so it matches the margin CDF at theta = 0 exactly.
pub fn zero_one_error(net: &TrainedResNet, data: &Dataset) -> Result<f64> {
    let mv = margins(net, data)?;
    Ok(margin_fractions(&mv, &[0.0])[0])
}

/// Verify the bound chain on recorded rounds: at every round,
/// train_err <= prod Z <= prod sqrt(1 - gamma^2) <= exp(-0.5 sum gamma^2),
/// with `slack` absorbing arithmetic rounding. Returns the first violated
/// round, if any.
///
/// gamma^2 is the signed normalized improvement sign(gamma) * gamma^2, so a
/// regression round contributes sqrt(1 + |impr|) > 1 -- exactly the
/// per-round factor the proof establishes, which telescopes to
/// sqrt((1 - edge_final^2) / (1 - edge_first^2)). Both outer inequalities
/// are algebraic; the middle one needs the per-round preconditions
/// (bounded hypotheses, nonpositive covariance, alpha at the analyzed value).
pub fn check_bound_chain(records: &[RoundRecord], slack: f64) -> Option<(usize, String)> {
    let mut prod_sqrt = 1.0;
    let mut sum_impr = 0.0;
    for r in records {
        let impr = r.gamma.signum() * r.gamma * r.gamma;
        prod_sqrt *= (1.0 - impr).max(0.0).sqrt();
        sum_impr += impr;
        let exp_bound = (-0.5 * sum_impr).exp();
        if r.train_err > r.z_product + slack {
            return Some((r.round, format!("train_err {} > prod Z {}", r.train_err, r.z_product)));
        }
        if r.z_product > prod_sqrt + slack {
            return Some((
                r.round,
                format!("prod Z {} > prod sqrt(1-g^2) {prod_sqrt}", r.z_product),
            ));
        }
        if prod_sqrt > exp_bound + slack {
            return Some((
                r.round,
                format!("prod sqrt(1-g^2) {prod_sqrt} > exp bound {exp_bound}"),
            ));
        }
    }
    None
}
