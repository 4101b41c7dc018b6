//! Binary telescoping-sum boosting: edges, alpha selection, the per-round
//! normalizer and reweighting, and the sequential training loop.
//!
//! Index convention, fixed once for the whole crate: with D_t the sample
//! distribution entering a round,
//!     edge_{t+1} = sum_i D_t(i) y_i o_{t+1}(x_i)
//!     alpha_{t+1} = 0.5 ln((1 + edge_{t+1}) / (1 - edge_{t+1}))
//!     gamma_t^2  = (edge_{t+1}^2 - edge_t^2) / (1 - edge_t^2)
//! which is the only assignment under which the per-round bound
//! Z_t <= sqrt(1 - gamma_t^2) type-checks.

use std::time::Instant;

use super::metrics::RoundRecord;
use super::{AlphaMode, BoostConfig, BoostRun, RunDiagnostics};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::numkit::{Matrix, Vector};
use crate::oracle::BlockOracle;
use crate::resnet::{
    block_forward, telescoping_check, AuxRound, FeatureBatch, FinalClassifier, ResidualBlock,
    Task, TrainedResNet,
};

const EDGE_CLAMP: f64 = 1.0 - 1e-9;
const ALPHA_SEARCH_MAX: f64 = 20.0;
const ALPHA_SEARCH_TOL: f64 = 1e-10;
const DIST_SUM_TOL: f64 = 1e-8;

/// Labels in {-1, +1}.
#[derive(Debug, Clone)]
pub struct LabelsBinary {
    y: Vec<f64>,
}

impl LabelsBinary {
    pub fn new(y: Vec<f64>) -> Result<Self> {
        if let Some(&bad) = y.iter().find(|&&v| v != 1.0 && v != -1.0) {
            return Err(Error::State(format!("binary label {bad} is not +-1")));
        }
        if y.is_empty() {
            return Err(Error::State("empty label vector".into()));
        }
        Ok(LabelsBinary { y })
    }

    pub fn from_dataset(ds: &Dataset) -> Result<Self> {
        LabelsBinary::new(ds.signed_labels()?)
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.y
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.y.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    /// Class indices (0/1) for the oracle interface.
    pub fn class_indices(&self) -> Vec<usize> {
        self.y.iter().map(|&v| if v > 0.0 { 1 } else { 0 }).collect()
    }
}

fn check_dist(dist: &[f64]) -> Result<()> {
    let sum: f64 = dist.iter().sum();
    if (sum - 1.0).abs() > DIST_SUM_TOL {
        return Err(Error::State(format!(
            "distribution sums to {sum}, expected 1 within {DIST_SUM_TOL}"
        )));
    }
    Ok(())
}

/// Distribution-weighted correlation between labels and hypothesis values.
pub fn edge(o_values: &[f64], y: &LabelsBinary, dist: &[f64]) -> Result<f64> {
    if o_values.len() != y.len() || dist.len() != y.len() {
        return Err(Error::Dimension(format!(
            "edge: lengths o={}, y={}, dist={}",
            o_values.len(),
            y.len(),
            dist.len()
        )));
    }
    check_dist(dist)?;
    debug_assert!(o_values.iter().all(|o| o.abs() <= 1.0 + 1e-9));
    Ok(o_values
        .iter()
        .zip(y.as_slice())
        .zip(dist)
        .map(|((o, yy), d)| d * yy * o)
        .sum())
}

#[derive(Debug, Clone, Copy)]
pub struct AlphaOutcome {
    pub alpha: f64,
    /// The edge hit the clamp at +-(1 - 1e-9); recorded as a saturation
    /// warning in the round metrics.
    pub clamped: bool,
}

/// Closed-form alpha = 0.5 ln((1+g)/(1-g)), clamping |g| to 1 - 1e-9.
pub fn alpha_from_edge(gamma_tilde: f64) -> AlphaOutcome {
    let clamped = gamma_tilde.abs() >= EDGE_CLAMP;
    let g = gamma_tilde.clamp(-EDGE_CLAMP, EDGE_CLAMP);
    AlphaOutcome {
        alpha: 0.5 * ((1.0 + g) / (1.0 - g)).ln(),
        clamped,
    }
}

/// Z_t as a function of alpha, the quantity the line search minimizes.
fn z_of_alpha(alpha: f64, o_next: &[f64], o_prev: &[f64], alpha_prev: f64, y: &[f64], dist: &[f64]) -> f64 {
    let mut z = 0.0;
    for i in 0..y.len() {
        let h = alpha * o_next[i] - alpha_prev * o_prev[i];
        z += dist[i] * (-y[i] * h).exp();
    }
    z
}

/// Exact alpha: argmin over [0, 20] of Z_t(alpha), located by golden-section
/// search (Z_t is convex in alpha). Flat objectives return 0 by convention.
pub fn alpha_line_search(
    o_next: &[f64],
    o_prev: &[f64],
    alpha_prev: f64,
    y: &LabelsBinary,
    dist: &[f64],
) -> Result<f64> {
    if o_next.len() != y.len() || o_prev.len() != y.len() || dist.len() != y.len() {
        return Err(Error::Dimension("alpha_line_search: length mismatch".into()));
    }
    check_dist(dist)?;
    let ys = y.as_slice();
    let f = |a: f64| z_of_alpha(a, o_next, o_prev, alpha_prev, ys, dist);

    // Golden-section on [0, 20].
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let mut lo = 0.0_f64;
    let mut hi = ALPHA_SEARCH_MAX;
    let mut b = hi - INV_PHI * (hi - lo);
    let mut c = lo + INV_PHI * (hi - lo);
    let mut fb = f(b);
    let mut fc = f(c);
    while hi - lo > ALPHA_SEARCH_TOL {
        if fb < fc {
            hi = c;
            c = b;
            fc = fb;
            b = hi - INV_PHI * (hi - lo);
            fb = f(b);
        } else {
            lo = b;
            b = c;
            fb = fc;
            c = lo + INV_PHI * (hi - lo);
            fc = f(c);
        }
    }
    let mut found = 0.5 * (lo + hi);

    // Golden section locates the bracket but value comparisons bottom out
    // near sqrt(eps); Newton steps on the smooth convex Z polish the
    // minimizer to machine-level stationarity (which the next round's
    // per-round bound depends on).
    for _ in 0..12 {
        let mut d1 = 0.0;
        let mut d2 = 0.0;
        for i in 0..ys.len() {
            let h = found * o_next[i] - alpha_prev * o_prev[i];
            let w = dist[i] * (-ys[i] * h).exp();
            d1 += w * (-ys[i] * o_next[i]);
            d2 += w * (ys[i] * o_next[i]).powi(2);
        }
        if d2 <= 0.0 {
            break;
        }
        let step = d1 / d2;
        let next = (found - step).clamp(0.0, ALPHA_SEARCH_MAX);
        if (next - found).abs() < 1e-15 * (1.0 + found) {
            found = next;
            break;
        }
        found = next;
    }

    // Ties (in particular a flat Z) resolve to the lowest point, 0.
    if f(0.0) <= f(found) {
        Ok(0.0)
    } else {
        Ok(found)
    }
}

/// The weak module classifier values h = alpha_next o_next - alpha_prev o_prev.
pub fn weak_module_value(
    o_next: &[f64],
    o_prev: &[f64],
    alpha_next: f64,
    alpha_prev: f64,
) -> Result<Vec<f64>> {
    if o_next.len() != o_prev.len() {
        return Err(Error::Dimension("weak_module_value: length mismatch".into()));
    }
    Ok(o_next
        .iter()
        .zip(o_prev)
        .map(|(a, b)| alpha_next * a - alpha_prev * b)
        .collect())
}

#[derive(Debug, Clone)]
pub struct ReweightOutcome {
    pub z: f64,
    /// ln(Z_t), always finite; the authoritative value when `shifted`.
    pub log_z: f64,
    /// Exponents exceeded +-500 and `z` may have lost precision.
    pub shifted: bool,
    pub dist_next: Vector,
}

/// Per-round normalizer Z_t = sum_i D_t(i) exp(-y_i h_i) and the reweighted
/// distribution, computed with a max-shift so extreme exponents stay stable.
pub fn z_and_reweight(h: &[f64], y: &LabelsBinary, dist: &[f64]) -> Result<ReweightOutcome> {
    if h.len() != y.len() || dist.len() != y.len() {
        return Err(Error::Dimension("z_and_reweight: length mismatch".into()));
    }
    check_dist(dist)?;
    let ys = y.as_slice();
    let exps: Vec<f64> = h.iter().zip(ys).map(|(hi, yi)| -yi * hi).collect();
    let shift = exps.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut weights: Vec<f64> = exps
        .iter()
        .zip(dist)
        .map(|(e, d)| d * (e - shift).exp())
        .collect();
    let sum: f64 = weights.iter().sum();
    let log_z = shift + sum.ln();
    for w in &mut weights {
        *w /= sum;
    }
    Ok(ReweightOutcome {
        z: log_z.exp(),
        log_z,
        shifted: shift.abs() > 500.0,
        dist_next: Vector::from_vec(weights),
    })
}

/// Normalized improvement gamma_t of edge_{t+1} over edge_t; negative when
/// the edge regressed (reported, not an error).
pub fn gamma_t(edge_next: f64, edge_prev: f64) -> Result<f64> {
    if edge_prev.abs() >= 1.0 {
        return Err(Error::State(format!(
            "gamma_t: |previous edge| = {} >= 1 (saturation should have been clamped)",
            edge_prev.abs()
        )));
    }
    let impr = (edge_next * edge_next - edge_prev * edge_prev) / (1.0 - edge_prev * edge_prev);
    Ok(if impr >= 0.0 {
        impr.sqrt()
    } else {
        -(-impr).sqrt()
    })
}

/// The boosting loop's evolving state. `round` counts completed rounds;
/// round 0 trains only the auxiliary classifier on raw features.
#[derive(Debug, Clone)]
pub struct BinaryState {
    pub dist: Vector,
    pub alpha: f64,
    pub edge: f64,
    pub o_values: Vector,
    /// Previous round's (rescaled) classifier, used to warm-start the oracle.
    pub last_classifier: Option<Vector>,
    pub round: usize,
    pub z_history: Vec<f64>,
    pub edge_history: Vec<f64>,
    pub gamma_history: Vec<f64>,
}

impl BinaryState {
    pub fn new(m: usize) -> Self {
        BinaryState {
            dist: Vector::uniform_dist(m),
            alpha: 0.0,
            edge: 0.0,
            o_values: Vector::zeros(m),
            last_classifier: None,
            round: 0,
            z_history: Vec::new(),
            edge_history: Vec::new(),
            gamma_history: Vec::new(),
        }
    }
}

/// The auxiliary classifier trained at one round, rescaled so its values on
/// the training set are bounded by 1.
#[derive(Debug, Clone)]
pub struct HypothesisModule {
    pub aux_classifier: Vector,
    pub level: usize,
}

#[derive(Debug, Clone)]
pub struct RoundOutput {
    pub block: Option<ResidualBlock>,
    pub hypothesis: HypothesisModule,
    pub record: RoundRecord,
    /// Max relative deviation of the reweighted distribution from its closed
    /// form exp(-y alpha o) (the identity that makes the unweighted oracle
    /// objective equivalent to the weighted one).
    pub dist_drift: f64,
}

pub(crate) struct RoundOptions {
    pub alpha_mode: AlphaMode,
    pub k: usize,
    pub sum_gamma_sq: f64,
}

/// One boosting round: train the subproblem, advance the features, pick
/// alpha, reweight. At `state.round == 0` no block is trained and the
/// features stay at level 1.
pub(crate) fn run_round(
    state: &mut BinaryState,
    features: &mut FeatureBatch,
    y: &LabelsBinary,
    oracle: &dyn BlockOracle,
    opts: &RoundOptions,
) -> Result<RoundOutput> {
    let m = y.len();
    let t = state.round;
    let with_block = t > 0;
    let started = Instant::now();

    let warm = state.last_classifier.clone().map(FinalClassifier::Binary);
    let result = oracle.train(
        features,
        &y.class_indices(),
        Task::Binary,
        opts.k,
        with_block,
        t,
        warm.as_ref(),
    )?;
    let block = result.block;
    if let Some(b) = &block {
        *features = block_forward(b, features)?;
    }
    let mut aux = match result.aux {
        FinalClassifier::Binary(w) => w,
        FinalClassifier::Multiclass(_) => {
            return Err(Error::Oracle {
                round: t,
                message: "oracle returned a multiclass classifier for a binary task".into(),
            })
        }
    };
    aux.check_finite("auxiliary classifier")?;

    // Hypothesis values, rescaled so max |o| <= 1 with the scale folded into
    // the classifier (the Jensen step of the bound needs boundedness).
    let mut o: Vec<f64> = (0..m)
        .map(|i| {
            aux.as_slice()
                .iter()
                .zip(features.features.row(i))
                .map(|(w, g)| w * g)
                .sum()
        })
        .collect();
    let max_abs = o.iter().map(|v| v.abs()).fold(0.0, f64::max);
    if max_abs > 1.0 {
        let inv = 1.0 / max_abs;
        aux.scale_in_place(inv);
        for v in &mut o {
            *v *= inv;
        }
    }

    let raw_edge = edge(&o, y, state.dist.as_slice())?;
    let clamped_edge = raw_edge.clamp(-EDGE_CLAMP, EDGE_CLAMP);
    let saturated = raw_edge.abs() >= EDGE_CLAMP;

    let alpha_next = match opts.alpha_mode {
        AlphaMode::ClosedForm => alpha_from_edge(clamped_edge).alpha,
        AlphaMode::LineSearch => {
            alpha_line_search(&o, state.o_values.as_slice(), state.alpha, y, state.dist.as_slice())?
        }
    };

    let h = weak_module_value(&o, state.o_values.as_slice(), alpha_next, state.alpha)?;
    let reweight = z_and_reweight(&h, y, state.dist.as_slice())?;

    // Scaled covariance between the proof's two exponential factors under
    // D_t, plus the second factor itself (the bound's previous-round moment).
    let (covariance, prev_exp_moment) = {
        let mut ea = 0.0;
        let mut eb = 0.0;
        let mut eab = 0.0;
        for i in 0..m {
            let a = (-alpha_next * y.as_slice()[i] * o[i]).exp();
            let b = (state.alpha * y.as_slice()[i] * state.o_values.get(i)).exp();
            let d = state.dist.get(i);
            ea += d * a;
            eb += d * b;
            eab += d * a * b;
        }
        (eab - ea * eb, eb)
    };

    let gamma = gamma_t(clamped_edge, state.edge)?;

    // Training error of the ensemble so far; by the telescoping identity the
    // accumulated score is exactly alpha_{t+1} o_{t+1}, and boundary ties
    // count as errors.
    let train_err = o
        .iter()
        .zip(y.as_slice())
        .filter(|(oi, yi)| **yi * alpha_next * **oi <= 0.0)
        .count() as f64
        / m as f64;

    // Closed-form distribution check: D_{t+1}(i) should be proportional to
    // exp(-y_i alpha_{t+1} o_{t+1}(x_i)).
    let dist_drift = {
        let mut norm = 0.0;
        let exps: Vec<f64> = (0..m)
            .map(|i| (-y.as_slice()[i] * alpha_next * o[i] - reweight.log_z).exp())
            .collect();
        for e in &exps {
            norm += e;
        }
        let mut drift: f64 = 0.0;
        for i in 0..m {
            let expect = exps[i] / norm;
            let got = reweight.dist_next.get(i);
            drift = drift.max((got - expect).abs() / expect.max(f64::MIN_POSITIVE));
        }
        drift
    };

    let z_product = state.z_history.iter().product::<f64>() * reweight.z;
    let sum_gamma_sq = opts.sum_gamma_sq + gamma.max(0.0).powi(2);

    // Residual of the exact-minimizer stationarity condition under the
    // reweighted distribution; the next round's per-round bound degrades by
    // about residual * sinh(alpha).
    let stationarity_residual = (0..m)
        .map(|i| reweight.dist_next.get(i) * y.as_slice()[i] * o[i])
        .sum::<f64>()
        .abs();

    let record = RoundRecord {
        round: t,
        edge: clamped_edge,
        gamma,
        alpha: alpha_next,
        z: reweight.z,
        z_product,
        train_err,
        train_err_bound: (-0.5 * sum_gamma_sq).exp(),
        covariance,
        exp_loss: None,
        saturated,
        stationarity_residual,
        prev_exp_moment,
        wallclock_ms: started.elapsed().as_millis() as u64,
    };

    state.dist = reweight.dist_next;
    state.alpha = alpha_next;
    state.edge = clamped_edge;
    state.o_values = Vector::from_vec(o);
    state.last_classifier = Some(aux.clone());
    state.round += 1;
    state.z_history.push(reweight.z);
    state.edge_history.push(clamped_edge);
    state.gamma_history.push(gamma);

    Ok(RoundOutput {
        block,
        hypothesis: HypothesisModule {
            aux_classifier: aux,
            level: features.level,
        },
        record,
        dist_drift,
    })
}

/// Public single-round entry point (mainly for tests and diagnostics); the
/// running sum of gamma^2 for the bound column is reconstructed from state.
pub fn boost_round(
    state: &mut BinaryState,
    features: &mut FeatureBatch,
    y: &LabelsBinary,
    oracle: &dyn BlockOracle,
    alpha_mode: AlphaMode,
    k: usize,
) -> Result<RoundOutput> {
    let sum_gamma_sq = state
        .gamma_history
        .iter()
        .map(|g| g.max(0.0).powi(2))
        .sum();
    run_round(
        state,
        features,
        y,
        oracle,
        &RoundOptions {
            alpha_mode,
            k,
            sum_gamma_sq,
        },
    )
}

/// Sequential train loop: round 0 on raw features, then up to `t_max` block
/// rounds, stopping early after `patience` consecutive block rounds with
/// gamma below the threshold. The assembled network is the block stack plus
/// the last auxiliary classifier.
pub fn train_binary(
    train: &Dataset,
    cfg: &BoostConfig,
    oracle: &dyn BlockOracle,
) -> Result<BoostRun> {
    cfg.validate()?;
    let y = LabelsBinary::from_dataset(train)?;
    let m = train.m();
    let n = train.n();

    let mut state = BinaryState::new(m);
    let mut features = FeatureBatch::raw_inputs(train.x.clone());
    let mut blocks: Vec<ResidualBlock> = Vec::new();
    let mut history: Vec<AuxRound> = Vec::new();
    let mut records: Vec<RoundRecord> = Vec::new();
    let mut max_drift: f64 = 0.0;
    let mut sum_gamma_sq = 0.0;
    let mut stalled = 0usize;
    let mut stopped_early = false;
    let mut last_aux: Option<Vector> = None;

    for t in 0..=cfg.t_max {
        let out = run_round(
            &mut state,
            &mut features,
            &y,
            oracle,
            &RoundOptions {
                alpha_mode: cfg.alpha_mode,
                k: cfg.k,
                sum_gamma_sq,
            },
        )?;
        sum_gamma_sq += out.record.gamma.max(0.0).powi(2);
        max_drift = max_drift.max(out.dist_drift);
        if let Some(b) = out.block {
            blocks.push(b);
        }
        history.push(AuxRound {
            alpha: out.record.alpha,
            classifier: FinalClassifier::Binary(out.hypothesis.aux_classifier.clone()),
        });
        last_aux = Some(out.hypothesis.aux_classifier.clone());
        let gamma = out.record.gamma;
        records.push(out.record);

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
        task: Task::Binary,
        n,
        k: cfg.k,
        blocks,
        final_classifier: FinalClassifier::Binary(last_aux.expect("at least round 0 ran")),
        alpha_final: state.alpha,
    };

    // Telescoping identity as a runtime invariant, on up to 256 training rows.
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
            max_cost_row_sum: 0.0,
        },
    })
}
