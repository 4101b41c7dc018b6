//! Multiclass telescoping-sum boosting: exponential-loss cost matrices,
//! simplex-valued hypotheses, and the training loop.
//!
//! State bookkeeping mirrors the binary loop. The accumulated score matrix
//! s(i, l) plays the role of the sample distribution: the cost matrix built
//! from it is the multiclass reweighting, and the per-round normalizer is
//! the raw state sum Z_t = sum_i sum_{l != y_i} exp(s(i,l) - s(i,y_i)),
//! whose ratio Z_t / Z_{t-1} is the quantity the theory bounds. Z at the
//! zero state is m*(C-1), so reported bounds divide by that.

use std::time::Instant;

use super::binary::{alpha_from_edge, gamma_t};
use super::metrics::RoundRecord;
use super::{BoostConfig, BoostRun, RunDiagnostics};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::numkit::{softmax, Matrix};
use crate::oracle::BlockOracle;
use crate::resnet::{
    block_forward, multiclass_margin, telescoping_check, AuxRound, FeatureBatch, FinalClassifier,
    ResidualBlock, Task, TrainedResNet,
};

const EDGE_CLAMP: f64 = 1.0 - 1e-9;

/// Accumulated per-class scores s_t(x_i, l) = sum_{tau <= t} h_tau(x_i, l).
#[derive(Debug, Clone)]
pub struct ScoreState {
    pub s: Matrix,
    pub round: usize,
}

impl ScoreState {
    pub fn zero(m: usize, c: usize) -> Self {
        ScoreState {
            s: Matrix::zeros(m, c),
            round: 0,
        }
    }
}

/// Per-example, per-class costs under the exponential loss. Off-diagonal
/// entries are nonnegative, the true-class entry carries minus their sum, so
/// every row sums to zero. `log_scale` is nonzero only when the raw
/// exponents would overflow; all uses of the matrix are scale-invariant.
#[derive(Debug, Clone)]
pub struct CostMatrix {
    pub values: Matrix,
    pub labels: Vec<usize>,
    pub log_scale: f64,
}

impl CostMatrix {
    pub fn m(&self) -> usize {
        self.values.rows()
    }

    pub fn classes(&self) -> usize {
        self.values.cols()
    }

    /// Sum over examples of the off-diagonal (non-true-class) costs.
    pub fn off_diagonal_sum(&self) -> f64 {
        self.labels
            .iter()
            .enumerate()
            .map(|(i, &y)| -self.values.get(i, y))
            .sum()
    }

    pub fn max_row_sum_abs(&self) -> f64 {
        (0..self.m())
            .map(|i| self.values.row(i).iter().sum::<f64>().abs())
            .fold(0.0, f64::max)
    }
}

/// The optimal cost function under the exponential loss:
/// C(i,l) = exp(s(i,l) - s(i,y_i)) off the true class, with the true-class
/// entry the negated row sum. A global max-shift keeps the entries finite;
/// the shift is recorded and cancels in every ratio the matrix feeds.
pub fn cost_matrix(state: &ScoreState, y: &[usize]) -> Result<CostMatrix> {
    let m = state.s.rows();
    let c = state.s.cols();
    if y.len() != m {
        return Err(Error::Dimension("cost_matrix: labels vs state rows".into()));
    }
    state.s.check_finite("score state")?;

    let mut max_exp = f64::NEG_INFINITY;
    for i in 0..m {
        let sy = state.s.get(i, y[i]);
        for l in 0..c {
            if l != y[i] {
                max_exp = max_exp.max(state.s.get(i, l) - sy);
            }
        }
    }
    let log_scale = if max_exp > 500.0 { max_exp - 500.0 } else { 0.0 };

    let mut values = Matrix::zeros(m, c);
    for i in 0..m {
        let sy = state.s.get(i, y[i]);
        let mut row_sum = 0.0;
        for l in 0..c {
            if l != y[i] {
                let v = (state.s.get(i, l) - sy - log_scale).exp();
                values.set(i, l, v);
                row_sum += v;
            }
        }
        values.set(i, y[i], -row_sum);
    }
    Ok(CostMatrix {
        values,
        labels: y.to_vec(),
        log_scale,
    })
}

/// Hypothesis rows on the probability simplex (softmax of class scores).
#[derive(Debug, Clone)]
pub struct SimplexHypothesis {
    pub o: Matrix,
}

impl SimplexHypothesis {
    pub fn from_scores(scores: &Matrix) -> Self {
        let mut o = Matrix::zeros(scores.rows(), scores.cols());
        for i in 0..scores.rows() {
            let sm = softmax(scores.row(i));
            o.row_mut(i).copy_from_slice(&sm);
        }
        SimplexHypothesis { o }
    }

    /// Uniform hypothesis: 1/C everywhere (the "random" baseline; its edge
    /// is exactly 0 because cost rows sum to zero).
    pub fn uniform(m: usize, c: usize) -> Self {
        SimplexHypothesis {
            o: Matrix::from_vec(m, c, vec![1.0 / c as f64; m * c]).unwrap(),
        }
    }

    pub fn check_rows(&self) -> Result<()> {
        for i in 0..self.o.rows() {
            let row = self.o.row(i);
            if row.iter().any(|&v| v < 0.0) {
                return Err(Error::State(format!("hypothesis row {i} has negative mass")));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > 1e-10 {
                return Err(Error::State(format!(
                    "hypothesis row {i} sums to {sum}, expected 1"
                )));
            }
        }
        Ok(())
    }
}

/// Multiclass edge: -sum_i <C(i,:), o(i,:)> over the total off-diagonal
/// cost. Zero denominator (perfect separation) saturates to 1 - 1e-9.
/// Returns the edge and whether it saturated.
pub fn multiclass_edge(cost: &CostMatrix, o: &SimplexHypothesis) -> Result<(f64, bool)> {
    if o.o.rows() != cost.m() || o.o.cols() != cost.classes() {
        return Err(Error::Dimension("multiclass_edge: shape mismatch".into()));
    }
    let den = cost.off_diagonal_sum();
    if den == 0.0 {
        return Ok((EDGE_CLAMP, true));
    }
    let mut num = 0.0;
    for i in 0..cost.m() {
        let crow = cost.values.row(i);
        let orow = o.o.row(i);
        let mut inner = 0.0;
        for (cv, ov) in crow.iter().zip(orow) {
            inner += cv * ov;
        }
        num -= inner;
    }
    let edge = num / den;
    let saturated = edge.abs() >= EDGE_CLAMP;
    Ok((edge.clamp(-EDGE_CLAMP, EDGE_CLAMP), saturated))
}

/// Mean exponential loss (1/m) sum_i sum_{l != y_i} exp(s(i,l) - s(i,y_i)).
pub fn exp_loss_multiclass(state: &ScoreState, y: &[usize]) -> f64 {
    state_sum(&state.s, y) / state.s.rows() as f64
}

fn state_sum(s: &Matrix, y: &[usize]) -> f64 {
    let mut total = 0.0;
    for i in 0..s.rows() {
        let sy = s.get(i, y[i]);
        for l in 0..s.cols() {
            if l != y[i] {
                total += (s.get(i, l) - sy).exp();
            }
        }
    }
    total
}

/// 0-1 training error from the accumulated state, ties counted as errors.
fn state_error(s: &Matrix, y: &[usize]) -> f64 {
    let m = s.rows();
    let errors = (0..m)
        .filter(|&i| multiclass_margin(s.row(i), y[i]) <= 0.0)
        .count();
    errors as f64 / m as f64
}

/// Multiclass sequential training. Alpha always uses the closed form (the
/// form the multiclass bound analyzes).
pub fn train_multiclass(
    train: &Dataset,
    cfg: &BoostConfig,
    oracle: &dyn BlockOracle,
) -> Result<BoostRun> {
    cfg.validate()?;
    let c = train.n_classes;
    if c < 2 {
        return Err(Error::Config(format!("multiclass needs >= 2 classes, got {c}")));
    }
    let m = train.m();
    let n = train.n();
    let y = &train.y;
    let task = Task::Multiclass(c);

    let mut state = ScoreState::zero(m, c);
    let mut features = FeatureBatch::raw_inputs(train.x.clone());
    let mut prev_o = SimplexHypothesis::uniform(m, c);
    let mut prev_alpha = 0.0;
    let mut prev_edge = 0.0;
    let mut z_prev = (m * (c - 1)) as f64; // state sum at s == 0
    let z_zero = z_prev;

    let mut blocks: Vec<ResidualBlock> = Vec::new();
    let mut history: Vec<AuxRound> = Vec::new();
    let mut records: Vec<RoundRecord> = Vec::new();
    let mut last_aux: Option<Matrix> = None;
    let mut sum_gamma_sq = 0.0;
    let mut max_drift: f64 = 0.0;
    let mut max_cost_row_sum: f64 = 0.0;
    let mut stalled = 0usize;
    let mut stopped_early = false;

    for t in 0..=cfg.t_max {
        let started = Instant::now();
        let cost = cost_matrix(&state, y)?;
        for i in 0..m {
            let rowsum: f64 = cost.values.row(i).iter().sum();
            let scale = cost.values.get(i, y[i]).abs().max(1.0);
            max_cost_row_sum = max_cost_row_sum.max(rowsum.abs() / scale);
        }

        let warm = last_aux.clone().map(FinalClassifier::Multiclass);
        let result = oracle.train(&features, y, task, cfg.k, t > 0, t, warm.as_ref())?;
        if let Some(b) = &result.block {
            features = block_forward(b, &features)?;
            blocks.push(b.clone());
        }
        let aux = match result.aux {
            FinalClassifier::Multiclass(v) => v,
            FinalClassifier::Binary(_) => {
                return Err(Error::Oracle {
                    round: t,
                    message: "oracle returned a binary classifier for a multiclass task".into(),
                })
            }
        };
        aux.check_finite("auxiliary classifier")?;

        let raw_scores = features.features.matmul(&aux)?;
        let o_next = SimplexHypothesis::from_scores(&raw_scores);

        let (edge_clamped, saturated) = multiclass_edge(&cost, &o_next)?;
        let alpha_next = alpha_from_edge(edge_clamped).alpha;

        // h_t(i, l) = alpha_{t+1} o_{t+1}(i, l) - alpha_t o_t(i, l); fold
        // into the accumulated state.
        for i in 0..m {
            let orow = o_next.o.row(i);
            let prow = prev_o.o.row(i);
            for l in 0..c {
                let h = alpha_next * orow[l] - prev_alpha * prow[l];
                state.s.set(i, l, state.s.get(i, l) + h);
            }
        }
        state.round = t + 1;

        let z = state_sum(&state.s, y);
        if !z.is_finite() {
            return Err(Error::Numerical(format!("state sum overflowed at round {t}")));
        }
        let exp_loss = z / m as f64;
        let train_err = state_error(&state.s, y);
        let gamma = gamma_t(edge_clamped, prev_edge)?;

        // Covariance of the proof's two per-(example, wrong-class) factors
        // under the cost weights: non-positivity gates the ratio bound. The
        // second factor is kept as the bound's previous-round moment.
        let (covariance, prev_exp_moment) = {
            let den = cost.off_diagonal_sum();
            if den == 0.0 {
                (0.0, 1.0)
            } else {
                let mut ea = 0.0;
                let mut eb = 0.0;
                let mut eab = 0.0;
                for i in 0..m {
                    let yi = y[i];
                    let on = o_next.o.row(i);
                    let op = prev_o.o.row(i);
                    for l in 0..c {
                        if l == yi {
                            continue;
                        }
                        let w = cost.values.get(i, l) / den;
                        let a = (alpha_next * (on[l] - on[yi])).exp();
                        let b = (-prev_alpha * (op[l] - op[yi])).exp();
                        ea += w * a;
                        eb += w * b;
                        eab += w * a * b;
                    }
                }
                (eab - ea * eb, eb)
            }
        };

        // State telescoping invariant: s should equal alpha_{t+1} o_{t+1}.
        for i in 0..m {
            let orow = o_next.o.row(i);
            for l in 0..c {
                let expect = alpha_next * orow[l];
                let got = state.s.get(i, l);
                let drift = (got - expect).abs() / (1.0 + expect.abs());
                max_drift = max_drift.max(drift);
            }
        }

        sum_gamma_sq += gamma.max(0.0).powi(2);
        let record = RoundRecord {
            round: t,
            edge: edge_clamped,
            gamma,
            alpha: alpha_next,
            z,
            z_product: z / z_zero,
            train_err,
            train_err_bound: (-0.5 * sum_gamma_sq).exp(),
            covariance,
            exp_loss: Some(exp_loss),
            saturated,
            stationarity_residual: 0.0,
            prev_exp_moment,
            wallclock_ms: started.elapsed().as_millis() as u64,
        };
        records.push(record);
        history.push(AuxRound {
            alpha: alpha_next,
            classifier: FinalClassifier::Multiclass(aux.clone()),
        });
        last_aux = Some(aux);
        prev_o = o_next;
        prev_alpha = alpha_next;
        prev_edge = edge_clamped;
        z_prev = z;
        let _ = z_prev;

        if t >= 1 {
            if gamma < cfg.gamma_threshold {
                stalled += 1;
            } else {
                stalled = 0;
            }
            if stalled >= cfg.patience && t < cfg.t_max {
                stopped_early = true;
                break;
            }
        }
    }

    let net = TrainedResNet {
        task,
        n,
        k: cfg.k,
        blocks,
        final_classifier: FinalClassifier::Multiclass(last_aux.expect("round 0 ran")),
        alpha_final: prev_alpha,
    };

    let check_m = m.min(256);
    let mut sub = Matrix::zeros(check_m, n);
    for i in 0..check_m {
        sub.row_mut(i).copy_from_slice(train.x.row(i));
    }
    let telescoping_discrepancy = telescoping_check(&net, &history, &sub)?;

    Ok(BoostRun {
        net,
        rounds: records,
        history,
        stopped_early,
        diagnostics: RunDiagnostics {
            max_state_drift: max_drift,
            telescoping_discrepancy,
            max_cost_row_sum,
        },
    })
}
