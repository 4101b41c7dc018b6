//! Block-training oracle: fits one residual block plus auxiliary classifier
//! by minibatch Adam on the exponential-loss subproblem, plus the end-to-end
//! backprop baseline trainer for the full stack.

mod core;
mod e2e;
mod train;

pub use e2e::{e2e_loss, e2e_loss_and_grad, train_e2e, E2eGrads, E2eParams, E2eResult, EpochRecord};
pub use train::{GradientOracle, OracleResult};

use serde::{Deserialize, Serialize};

use self::core::{eval_subproblem, SubLayout, TaskLabels};
use crate::error::{Error, Result};
use crate::numkit::{Matrix, Vector};
use crate::resnet::{FeatureBatch, FinalClassifier, ResidualBlock, Task};

/// Early stopping on stalled training loss: stop once the best full-batch
/// loss has improved by less than `min_rel_improvement` (relatively) for
/// `patience` consecutive epochs.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct EarlyStop {
    pub min_rel_improvement: f64,
    pub patience: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OracleConfig {
    pub learning_rate: f64,
    /// Inverse-time decay: lr_epoch = learning_rate / (1 + lr_decay * epoch).
    pub lr_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Weight init stddev is init_scale / sqrt(fan_in); block output weights
    /// get an extra 0.1 so fresh blocks start near the identity map.
    pub init_scale: f64,
    pub seed: u64,
    pub max_grad_norm: f64,
    #[serde(default)]
    pub early_stop: Option<EarlyStop>,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig {
            learning_rate: 0.01,
            lr_decay: 0.0,
            epochs: 40,
            batch_size: 32,
            init_scale: 1.0,
            seed: 0,
            max_grad_norm: 10.0,
            early_stop: None,
        }
    }
}

impl OracleConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.learning_rate.is_finite() || self.learning_rate < 0.0 {
            return Err(Error::Config(format!(
                "oracle.learning_rate must be a finite value >= 0, got {}",
                self.learning_rate
            )));
        }
        if !self.lr_decay.is_finite() || self.lr_decay < 0.0 {
            return Err(Error::Config(format!(
                "oracle.lr_decay must be a finite value >= 0, got {}",
                self.lr_decay
            )));
        }
        if self.epochs < 1 {
            return Err(Error::Config("oracle.epochs must be >= 1".into()));
        }
        if self.batch_size < 1 {
            return Err(Error::Config("oracle.batch_size must be >= 1".into()));
        }
        if !self.init_scale.is_finite() || self.init_scale < 0.0 {
            return Err(Error::Config(format!(
                "oracle.init_scale must be a finite value >= 0, got {}",
                self.init_scale
            )));
        }
        if !self.max_grad_norm.is_finite() || self.max_grad_norm <= 0.0 {
            return Err(Error::Config(format!(
                "oracle.max_grad_norm must be a finite value > 0, got {}",
                self.max_grad_norm
            )));
        }
        Ok(())
    }
}

/// Anything that can train one level of the network: the auxiliary classifier
/// alone at round 0 (`with_block = false`), or a residual block plus its
/// classifier at later rounds. `round` keys the oracle's private randomness.
///
/// `warm_start` carries the previous round's auxiliary classifier. A fresh
/// block starts near the identity map, so warm-starting makes the new
/// hypothesis open at the previous one's quality and improve from there --
/// the premise the weak-learning condition rests on.
pub trait BlockOracle {
    fn train(
        &self,
        features: &FeatureBatch,
        labels: &[usize],
        task: Task,
        k: usize,
        with_block: bool,
        round: usize,
        warm_start: Option<&FinalClassifier>,
    ) -> Result<OracleResult>;
}

fn flatten(block: Option<&ResidualBlock>, aux: &[f64], alpha: f64, lay: SubLayout) -> Vec<f64> {
    let mut params = vec![0.0; lay.len()];
    if let Some(b) = block {
        params[lay.w_in()].copy_from_slice(b.w_in().data());
        params[lay.w_out()].copy_from_slice(b.w_out().data());
    }
    params[lay.aux()].copy_from_slice(aux);
    params[lay.log_alpha()] = alpha.ln();
    params
}

/// Mean exponential loss (1/m) sum_i exp(-y_i alpha v^T [f(g_i) + g_i]),
/// with f omitted when `block` is None (the round-0 subproblem).
pub fn oracle_loss_binary(
    block: Option<&ResidualBlock>,
    v: &Vector,
    alpha: f64,
    g: &Matrix,
    y_signed: &[f64],
) -> Result<f64> {
    Ok(binary_eval(block, v, alpha, g, y_signed, None)?.loss)
}

/// Same quantity in the log domain (finite even for extreme margins).
pub fn oracle_log_loss_binary(
    block: Option<&ResidualBlock>,
    v: &Vector,
    alpha: f64,
    g: &Matrix,
    y_signed: &[f64],
) -> Result<f64> {
    Ok(binary_eval(block, v, alpha, g, y_signed, None)?.log_loss)
}

#[derive(Debug, Clone)]
pub struct OracleGrads {
    pub w_in: Option<Matrix>,
    pub w_out: Option<Matrix>,
    /// Gradient w.r.t. the auxiliary classifier (n, or n x C flattened row-major).
    pub aux: Vec<f64>,
    /// Gradient w.r.t. alpha itself (not log alpha).
    pub alpha: f64,
}

/// Analytic gradients of `oracle_loss_binary` for (w_in, w_out, v, alpha).
pub fn oracle_grad_binary(
    block: Option<&ResidualBlock>,
    v: &Vector,
    alpha: f64,
    g: &Matrix,
    y_signed: &[f64],
) -> Result<OracleGrads> {
    let lay = layout_binary(block, v, g, y_signed)?;
    let mut grad = vec![0.0; lay.len()];
    let params = flatten(block, v.as_slice(), alpha, lay);
    eval_subproblem(
        &params,
        lay,
        g.data(),
        g.rows(),
        &TaskLabels::Binary(y_signed),
        Some(&mut grad),
    );
    grads_from_flat(grad, lay)
}

fn binary_eval(
    block: Option<&ResidualBlock>,
    v: &Vector,
    alpha: f64,
    g: &Matrix,
    y_signed: &[f64],
    grad: Option<&mut [f64]>,
) -> Result<core::LossOut> {
    let lay = layout_binary(block, v, g, y_signed)?;
    let params = flatten(block, v.as_slice(), alpha, lay);
    Ok(eval_subproblem(
        &params,
        lay,
        g.data(),
        g.rows(),
        &TaskLabels::Binary(y_signed),
        grad,
    ))
}

fn layout_binary(
    block: Option<&ResidualBlock>,
    v: &Vector,
    g: &Matrix,
    y_signed: &[f64],
) -> Result<SubLayout> {
    if g.rows() != y_signed.len() {
        return Err(Error::Dimension(format!(
            "{} feature rows vs {} labels",
            g.rows(),
            y_signed.len()
        )));
    }
    if v.len() != g.cols() {
        return Err(Error::Dimension(format!(
            "classifier has {} weights, features have {} columns",
            v.len(),
            g.cols()
        )));
    }
    if let Some(b) = block {
        if b.n() != g.cols() {
            return Err(Error::Dimension(format!(
                "block expects {} channels, features have {}",
                b.n(),
                g.cols()
            )));
        }
    }
    Ok(SubLayout {
        n: g.cols(),
        k: block.map_or(0, |b| b.k()),
        c: 1,
        has_block: block.is_some(),
    })
}

/// Multiclass subproblem loss
/// sum_i exp(-a s(i,y_i)) sum_{l != y_i} exp(a s(i,l)), normalized by m(C-1),
/// where s(i,l) is the l-th column score of `v` on f(g_i) + g_i.
pub fn oracle_loss_multiclass(
    block: Option<&ResidualBlock>,
    v: &Matrix,
    alpha: f64,
    g: &Matrix,
    y: &[usize],
) -> Result<f64> {
    Ok(multiclass_eval(block, v, alpha, g, y, None)?.loss)
}

pub fn oracle_log_loss_multiclass(
    block: Option<&ResidualBlock>,
    v: &Matrix,
    alpha: f64,
    g: &Matrix,
    y: &[usize],
) -> Result<f64> {
    Ok(multiclass_eval(block, v, alpha, g, y, None)?.log_loss)
}

pub fn oracle_grad_multiclass(
    block: Option<&ResidualBlock>,
    v: &Matrix,
    alpha: f64,
    g: &Matrix,
    y: &[usize],
) -> Result<OracleGrads> {
    let lay = layout_multiclass(block, v, g, y)?;
    let mut grad = vec![0.0; lay.len()];
    let params = flatten(block, v.data(), alpha, lay);
    eval_subproblem(
        &params,
        lay,
        g.data(),
        g.rows(),
        &TaskLabels::Multiclass(y),
        Some(&mut grad),
    );
    grads_from_flat(grad, lay)
}

fn multiclass_eval(
    block: Option<&ResidualBlock>,
    v: &Matrix,
    alpha: f64,
    g: &Matrix,
    y: &[usize],
    grad: Option<&mut [f64]>,
) -> Result<core::LossOut> {
    let lay = layout_multiclass(block, v, g, y)?;
    let params = flatten(block, v.data(), alpha, lay);
    Ok(eval_subproblem(
        &params,
        lay,
        g.data(),
        g.rows(),
        &TaskLabels::Multiclass(y),
        grad,
    ))
}

fn layout_multiclass(
    block: Option<&ResidualBlock>,
    v: &Matrix,
    g: &Matrix,
    y: &[usize],
) -> Result<SubLayout> {
    if g.rows() != y.len() {
        return Err(Error::Dimension(format!(
            "{} feature rows vs {} labels",
            g.rows(),
            y.len()
        )));
    }
    if v.rows() != g.cols() {
        return Err(Error::Dimension(format!(
            "classifier has {} rows, features have {} columns",
            v.rows(),
            g.cols()
        )));
    }
    if v.cols() < 2 {
        return Err(Error::Dimension("multiclass classifier needs >= 2 columns".into()));
    }
    if let Some(&bad) = y.iter().find(|&&l| l >= v.cols()) {
        return Err(Error::State(format!("label {bad} out of range")));
    }
    if let Some(b) = block {
        if b.n() != g.cols() {
            return Err(Error::Dimension("block/feature channel mismatch".into()));
        }
    }
    Ok(SubLayout {
        n: g.cols(),
        k: block.map_or(0, |b| b.k()),
        c: v.cols(),
        has_block: block.is_some(),
    })
}

fn grads_from_flat(grad: Vec<f64>, lay: SubLayout) -> Result<OracleGrads> {
    if let Some(pos) = grad.iter().position(|v| !v.is_finite()) {
        return Err(Error::Numerical(format!(
            "non-finite gradient in parameter '{}'",
            lay.param_name(pos)
        )));
    }
    let (w_in, w_out) = if lay.has_block {
        (
            Some(Matrix::from_vec(lay.n, lay.k, grad[lay.w_in()].to_vec())?),
            Some(Matrix::from_vec(lay.k, lay.n, grad[lay.w_out()].to_vec())?),
        )
    } else {
        (None, None)
    };
    Ok(OracleGrads {
        w_in,
        w_out,
        aux: grad[lay.aux()].to_vec(),
        alpha: grad[lay.log_alpha()],
    })
}
