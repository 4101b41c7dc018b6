//! Minibatch Adam trainer for the per-round subproblem.

use super::core::{eval_subproblem, eval_subproblem_in, GradDomain, SubLayout, TaskLabels};
use super::{BlockOracle, OracleConfig};
use crate::error::{Error, Result};
use crate::numkit::{Matrix, Rng};
use crate::resnet::{FeatureBatch, FinalClassifier, ResidualBlock, Task};

const DIVERGENCE_LOSS: f64 = 1e6;
const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

pub(crate) struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(len: usize) -> Self {
        Adam {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64) {
        self.t += 1;
        let bc1 = 1.0 - ADAM_BETA1.powi(self.t as i32);
        let bc2 = 1.0 - ADAM_BETA2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = ADAM_BETA1 * self.m[i] + (1.0 - ADAM_BETA1) * g;
            self.v[i] = ADAM_BETA2 * self.v[i] + (1.0 - ADAM_BETA2) * g * g;
            let mhat = self.m[i] / bc1;
            let vhat = self.v[i] / bc2;
            params[i] -= lr * mhat / (vhat.sqrt() + ADAM_EPS);
        }
    }
}

/// Scale gradients so the global l2 norm is at most `max_norm`.
pub(crate) fn clip_grad_norm(grads: &mut [f64], max_norm: f64) -> f64 {
    let norm = grads.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        for g in grads.iter_mut() {
            *g *= s;
        }
        max_norm
    } else {
        norm
    }
}

/// Result of one oracle call: the trained block (absent at round 0), the
/// auxiliary classifier, the jointly fitted alpha (callers recompute their
/// own), the loss trace, and the gradient check recorded at initialization.
#[derive(Debug, Clone)]
pub struct OracleResult {
    pub block: Option<ResidualBlock>,
    pub aux: FinalClassifier,
    pub alpha: f64,
    pub final_loss: f64,
    pub loss_curve: Vec<f64>,
    pub grad_check: f64,
}

/// The default oracle: minibatch Adam on the exponential-loss subproblem.
#[derive(Debug, Clone)]
pub struct GradientOracle {
    pub cfg: OracleConfig,
}

impl GradientOracle {
    pub fn new(cfg: OracleConfig) -> Self {
        GradientOracle { cfg }
    }
}

impl BlockOracle for GradientOracle {
    fn train(
        &self,
        features: &FeatureBatch,
        labels: &[usize],
        task: Task,
        k: usize,
        with_block: bool,
        round: usize,
        warm_start: Option<&FinalClassifier>,
    ) -> Result<OracleResult> {
        train_block(features, labels, task, k, with_block, round, warm_start, &self.cfg)
    }
}

pub(crate) fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-3)
}

#[allow(clippy::too_many_arguments)]
pub fn train_block(
    features: &FeatureBatch,
    labels: &[usize],
    task: Task,
    k: usize,
    with_block: bool,
    round: usize,
    warm_start: Option<&FinalClassifier>,
    cfg: &OracleConfig,
) -> Result<OracleResult> {
    cfg.validate()?;
    let g = &features.features;
    let m = g.rows();
    let n = g.cols();
    if m != labels.len() {
        return Err(Error::Dimension(format!(
            "{} feature rows vs {} labels",
            m,
            labels.len()
        )));
    }
    let c = match task {
        Task::Binary => 1,
        Task::Multiclass(c) => c,
    };
    let lay = SubLayout {
        n,
        k: if with_block { k } else { 0 },
        c,
        has_block: with_block,
    };

    let signed: Vec<f64>;
    let owned_labels: TaskLabels = match task {
        Task::Binary => {
            signed = labels.iter().map(|&l| if l == 1 { 1.0 } else { -1.0 }).collect();
            TaskLabels::Binary(&signed)
        }
        Task::Multiclass(_) => TaskLabels::Multiclass(labels),
    };

    // ---- init ----
    let mut init_rng = Rng::with_stream(Rng::derive_seed_indexed(cfg.seed, "oracle-init", round as u64), "w");
    let mut params = vec![0.0; lay.len()];
    if with_block {
        let sd_in = cfg.init_scale / (n as f64).sqrt();
        let sd_out = 0.1 * cfg.init_scale / (k.max(1) as f64).sqrt();
        for p in &mut params[lay.w_in()] {
            *p = init_rng.gaussian() * sd_in;
        }
        for p in &mut params[lay.w_out()] {
            *p = init_rng.gaussian() * sd_out;
        }
    }
    // Without a warm start the classifier begins at zero: scores vanish, so
    // the exponential loss is exactly 1 no matter how large the accumulated
    // residual features have grown by this round. With one, the new
    // hypothesis opens at the previous round's quality (the fresh block is
    // near-identity) and improves from there.
    match warm_start {
        Some(FinalClassifier::Binary(w)) => {
            if task != Task::Binary || w.len() != n {
                return Err(Error::Config("warm start shape does not match task".into()));
            }
            params[lay.aux()].copy_from_slice(w.as_slice());
        }
        Some(FinalClassifier::Multiclass(w)) => {
            if w.rows() != n || w.cols() != c {
                return Err(Error::Config("warm start shape does not match task".into()));
            }
            params[lay.aux()].copy_from_slice(w.data());
        }
        None => {}
    }
    params[lay.log_alpha()] = 0.0; // alpha starts at 1

    // ---- gradient check at initialization ----
    // Checked at a jittered copy of the init point so every gradient path
    // (not just the zero-initialized classifier) carries signal.
    let grad_check = {
        let mut check_rng = Rng::with_stream(cfg.seed, "gradcheck");
        let mut probe = params.clone();
        for p in probe.iter_mut() {
            *p += 0.05 * check_rng.gaussian();
        }
        gradient_check_at(&probe, lay, g, &owned_labels, m.min(32), &mut check_rng)
    };

    let full_log_loss = |p: &[f64]| -> f64 {
        eval_subproblem_in(p, lay, g.data(), m, &owned_labels, None, GradDomain::LogLoss).log_loss
    };

    let init_log_loss = full_log_loss(&params);
    if !init_log_loss.is_finite() || init_log_loss > DIVERGENCE_LOSS.ln() {
        return Err(Error::Oracle {
            round,
            message: format!("divergent loss exp({init_log_loss}) at initialization"),
        });
    }
    let mut loss_curve = vec![init_log_loss.exp()];
    let mut best_log_loss = init_log_loss;
    let mut best_params = params.clone();

    let mut adam = Adam::new(lay.len());
    let mut shuffle_rng = Rng::with_stream(
        Rng::derive_seed_indexed(cfg.seed, "oracle-shuffle", round as u64),
        "s",
    );
    let mut order: Vec<usize> = (0..m).collect();
    let mut grad = vec![0.0; lay.len()];
    let mut batch_g = vec![0.0; cfg.batch_size.min(m) * n];
    let mut stalled_epochs = 0usize;

    for epoch in 0..cfg.epochs {
        let lr = cfg.learning_rate / (1.0 + cfg.lr_decay * epoch as f64);
        shuffle_rng.shuffle(&mut order);
        let mut start = 0;
        while start < m {
            let end = (start + cfg.batch_size).min(m);
            let bsz = end - start;
            let batch = &mut batch_g[..bsz * n];
            let mut batch_signed = Vec::new();
            let mut batch_classes = Vec::new();
            for (bi, &i) in order[start..end].iter().enumerate() {
                batch[bi * n..(bi + 1) * n].copy_from_slice(g.row(i));
                match &owned_labels {
                    TaskLabels::Binary(ys) => batch_signed.push(ys[i]),
                    TaskLabels::Multiclass(ys) => batch_classes.push(ys[i]),
                }
            }
            let batch_labels = match &owned_labels {
                TaskLabels::Binary(_) => TaskLabels::Binary(&batch_signed),
                TaskLabels::Multiclass(_) => TaskLabels::Multiclass(&batch_classes),
            };
            // Log-domain gradients: per-term weights are normalized, so the
            // step direction stays finite through arbitrarily bad
            // transients of the exponential loss.
            eval_subproblem_in(
                &params,
                lay,
                batch,
                bsz,
                &batch_labels,
                Some(&mut grad),
                GradDomain::LogLoss,
            );
            // chain rule into the stored log-alpha coordinate
            let alpha = params[lay.log_alpha()].exp();
            grad[lay.log_alpha()] *= alpha;
            if let Some(pos) = grad.iter().position(|v| !v.is_finite()) {
                return Err(Error::Oracle {
                    round,
                    message: format!(
                        "non-finite gradient in parameter '{}' at epoch {epoch}",
                        lay.param_name(pos)
                    ),
                });
            }
            clip_grad_norm(&mut grad, cfg.max_grad_norm);
            adam.step(&mut params, &grad, lr);
            // Keep the jointly-fit alpha inside the boosting loop's own
            // search domain; an unbounded alpha lets one bad minibatch step
            // blow the exponential loss past recovery.
            params[lay.log_alpha()] = params[lay.log_alpha()].clamp(-3.0, 3.0);
            start = end;
        }

        let log_loss = full_log_loss(&params);
        if !log_loss.is_finite() {
            return Err(Error::Oracle {
                round,
                message: format!("non-finite loss at epoch {epoch}"),
            });
        }
        loss_curve.push(log_loss.exp());
        if log_loss < best_log_loss {
            let improvement = best_log_loss - log_loss; // relative, in log space
            best_log_loss = log_loss;
            best_params.copy_from_slice(&params);
            if let Some(es) = &cfg.early_stop {
                if improvement < es.min_rel_improvement {
                    stalled_epochs += 1;
                } else {
                    stalled_epochs = 0;
                }
            }
        } else if cfg.early_stop.is_some() {
            stalled_epochs += 1;
        }
        if let Some(es) = &cfg.early_stop {
            if stalled_epochs >= es.patience {
                break;
            }
        }
    }

    // Divergence guard applies to what the oracle hands back: the best
    // snapshot, not transient mid-training spikes.
    if best_log_loss > DIVERGENCE_LOSS.ln() {
        return Err(Error::Oracle {
            round,
            message: format!("divergent loss exp({best_log_loss})"),
        });
    }

    let block = if with_block {
        Some(ResidualBlock::new(
            Matrix::from_vec(n, k, best_params[lay.w_in()].to_vec())?,
            Matrix::from_vec(k, n, best_params[lay.w_out()].to_vec())?,
        )?)
    } else {
        None
    };
    let aux = match task {
        Task::Binary => FinalClassifier::Binary(best_params[lay.aux()].to_vec().into()),
        Task::Multiclass(_) => {
            FinalClassifier::Multiclass(Matrix::from_vec(n, c, best_params[lay.aux()].to_vec())?)
        }
    };
    Ok(OracleResult {
        block,
        aux,
        alpha: best_params[lay.log_alpha()].exp(),
        final_loss: best_log_loss.exp(),
        loss_curve,
        grad_check,
    })
}

/// Compare analytic gradients against central differences on a small prefix
/// of the batch, a few coordinates per parameter tensor. Returns the max
/// relative error seen.
fn gradient_check_at(
    params: &[f64],
    lay: SubLayout,
    g: &Matrix,
    labels: &TaskLabels,
    m_check: usize,
    rng: &mut Rng,
) -> f64 {
    let n = lay.n;
    let sub_g: Vec<f64> = g.data()[..m_check * n].to_vec();
    let sub_signed: Vec<f64>;
    let sub_classes: Vec<usize>;
    let sub_labels = match labels {
        TaskLabels::Binary(ys) => {
            sub_signed = ys[..m_check].to_vec();
            TaskLabels::Binary(&sub_signed)
        }
        TaskLabels::Multiclass(ys) => {
            sub_classes = ys[..m_check].to_vec();
            TaskLabels::Multiclass(&sub_classes)
        }
    };

    let mut grad = vec![0.0; lay.len()];
    eval_subproblem(params, lay, &sub_g, m_check, &sub_labels, Some(&mut grad));

    let mut coords: Vec<usize> = Vec::new();
    for range in [lay.w_in(), lay.w_out(), lay.aux()] {
        if range.is_empty() {
            continue;
        }
        for _ in 0..3 {
            coords.push(range.start + rng.next_usize(range.len()));
        }
    }
    coords.push(lay.log_alpha());

    let mut probe = params.to_vec();
    let h = 1e-5;
    let mut max_err: f64 = 0.0;
    for &idx in &coords {
        let orig = probe[idx];
        probe[idx] = orig + h;
        let fp = eval_subproblem(&probe, lay, &sub_g, m_check, &sub_labels, None).loss;
        probe[idx] = orig - h;
        let fm = eval_subproblem(&probe, lay, &sub_g, m_check, &sub_labels, None).loss;
        probe[idx] = orig;
        let fd = (fp - fm) / (2.0 * h);
        // the flat coordinate is log(alpha); analytic grad is d/dAlpha
        let analytic = if idx == lay.log_alpha() {
            grad[idx] * orig.exp()
        } else {
            grad[idx]
        };
        max_err = max_err.max(rel_err(analytic, fd));
    }
    max_err
}
