//! Residual blocks, forward propagation, the assembled classifier, and the
//! telescoping identity that ties the per-round auxiliary classifiers to the
//! final network output.

mod serialize;

pub use serialize::{read_model, write_model};

use crate::error::{Error, Result};
use crate::numkit::{softmax, Matrix, Vector};

/// One residual block: a single-hidden-layer MLP module plus identity loop.
///
/// The module computes `w_out^T relu(w_in^T z)`; the block adds `z` back.
/// `w_in` is n x k, `w_out` is k x n, so the block maps n channels to n
/// channels as the identity loop requires.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualBlock {
    w_in: Matrix,
    w_out: Matrix,
}

impl ResidualBlock {
    pub fn new(w_in: Matrix, w_out: Matrix) -> Result<Self> {
        if w_in.cols() != w_out.rows() || w_in.rows() != w_out.cols() {
            return Err(Error::Dimension(format!(
                "block weights {}x{} and {}x{} do not compose to an n->n map",
                w_in.rows(),
                w_in.cols(),
                w_out.rows(),
                w_out.cols()
            )));
        }
        Ok(ResidualBlock { w_in, w_out })
    }

    pub fn zeros(n: usize, k: usize) -> Self {
        ResidualBlock {
            w_in: Matrix::zeros(n, k),
            w_out: Matrix::zeros(k, n),
        }
    }

    /// Channel count n (input and output dimension).
    #[inline]
    pub fn n(&self) -> usize {
        self.w_in.rows()
    }

    /// Hidden width k.
    #[inline]
    pub fn k(&self) -> usize {
        self.w_in.cols()
    }

    pub fn w_in(&self) -> &Matrix {
        &self.w_in
    }

    pub fn w_out(&self) -> &Matrix {
        &self.w_out
    }

    pub fn w_in_mut(&mut self) -> &mut Matrix {
        &mut self.w_in
    }

    pub fn w_out_mut(&mut self) -> &mut Matrix {
        &mut self.w_out
    }

    /// Module output `w_out^T relu(w_in^T z)` for one example (no identity).
    pub fn module_vec(&self, z: &[f64]) -> Vec<f64> {
        let n = self.n();
        let k = self.k();
        debug_assert_eq!(z.len(), n);
        let mut hidden = vec![0.0; k];
        for (p, &zp) in z.iter().enumerate() {
            if zp == 0.0 {
                continue;
            }
            let row = self.w_in.row(p);
            for (h, w) in hidden.iter_mut().zip(row) {
                *h += w * zp;
            }
        }
        for h in &mut hidden {
            *h = h.max(0.0);
        }
        let mut out = vec![0.0; n];
        for (r, &a) in hidden.iter().enumerate() {
            if a == 0.0 {
                continue;
            }
            let row = self.w_out.row(r);
            for (o, w) in out.iter_mut().zip(row) {
                *o += w * a;
            }
        }
        out
    }

    /// Module outputs for a whole batch (rows of `g`), as an m x n matrix.
    pub fn module_batch(&self, g: &Matrix) -> Result<Matrix> {
        if g.cols() != self.n() {
            return Err(Error::Dimension(format!(
                "block expects {} channels, batch has {}",
                self.n(),
                g.cols()
            )));
        }
        // hidden = relu(G * w_in), out = hidden * w_out
        let mut hidden = g.matmul(&self.w_in)?;
        for v in hidden.data_mut() {
            *v = v.max(0.0);
        }
        hidden.matmul(&self.w_out)
    }
}

/// A batch of feature representations at one level of the network.
///
/// At level 1 the features are the raw inputs: the recursion is seeded with
/// g_1 = x (level 0 is the zero representation and its module output is x
/// itself, so no level-0 parameters exist).
#[derive(Debug, Clone)]
pub struct FeatureBatch {
    pub level: usize,
    pub features: Matrix,
}

impl FeatureBatch {
    pub fn raw_inputs(x: Matrix) -> Self {
        FeatureBatch { level: 1, features: x }
    }

    #[inline]
    pub fn m(&self) -> usize {
        self.features.rows()
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.features.cols()
    }
}

/// One residual step: module output plus identity loop, advancing the level.
pub fn block_forward(block: &ResidualBlock, g: &FeatureBatch) -> Result<FeatureBatch> {
    let mut out = block.module_batch(&g.features)?;
    for (o, v) in out.data_mut().iter_mut().zip(g.features.data()) {
        *o += v;
    }
    Ok(FeatureBatch {
        level: g.level + 1,
        features: out,
    })
}

/// Run the full stack, returning every level g_1 .. g_{T+1}.
pub fn propagate(blocks: &[ResidualBlock], x: &Matrix) -> Result<Vec<FeatureBatch>> {
    let mut levels = Vec::with_capacity(blocks.len() + 1);
    levels.push(FeatureBatch::raw_inputs(x.clone()));
    for block in blocks {
        let next = block_forward(block, levels.last().unwrap())?;
        levels.push(next);
    }
    Ok(levels)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    Binary,
    Multiclass(usize),
}

impl Task {
    pub fn classes(&self) -> usize {
        match self {
            Task::Binary => 2,
            Task::Multiclass(c) => *c,
        }
    }
}

/// Final linear classifier: a vector for binary, an n x C matrix whose
/// columns are per-class score channels for multiclass.
#[derive(Debug, Clone, PartialEq)]
pub enum FinalClassifier {
    Binary(Vector),
    Multiclass(Matrix),
}

impl FinalClassifier {
    pub fn n(&self) -> usize {
        match self {
            FinalClassifier::Binary(w) => w.len(),
            FinalClassifier::Multiclass(w) => w.rows(),
        }
    }

    /// Class scores for one feature vector: `[w^T z]` or `W^T z`.
    pub fn scores(&self, z: &[f64]) -> Vec<f64> {
        match self {
            FinalClassifier::Binary(w) => {
                vec![w.as_slice().iter().zip(z).map(|(a, b)| a * b).sum()]
            }
            FinalClassifier::Multiclass(w) => {
                let mut out = vec![0.0; w.cols()];
                for (p, &zp) in z.iter().enumerate() {
                    if zp == 0.0 {
                        continue;
                    }
                    for (o, v) in out.iter_mut().zip(w.row(p)) {
                        *o += v * zp;
                    }
                }
                out
            }
        }
    }
}

/// The assembled network: blocks f_1..f_T plus the last auxiliary classifier
/// promoted to the output layer, with its boosting weight `alpha_final`.
#[derive(Debug, Clone)]
pub struct TrainedResNet {
    pub task: Task,
    pub n: usize,
    pub k: usize,
    pub blocks: Vec<ResidualBlock>,
    pub final_classifier: FinalClassifier,
    pub alpha_final: f64,
}

impl TrainedResNet {
    pub fn depth(&self) -> usize {
        self.blocks.len()
    }

    fn top_features(&self, x: &[f64]) -> Vec<f64> {
        let mut z = x.to_vec();
        for block in &self.blocks {
            let module = block.module_vec(&z);
            for (zi, mi) in z.iter_mut().zip(&module) {
                *zi += mi;
            }
        }
        z
    }

    /// F(x) for binary (one score) or the C class scores for multiclass.
    pub fn score(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.n {
            return Err(Error::Dimension(format!(
                "score: input has {} features, network expects {}",
                x.len(),
                self.n
            )));
        }
        let top = self.top_features(x);
        Ok(self.final_classifier.scores(&top))
    }

    /// Predicted class index. Binary: 1 if F(x) > 0 else 0. Multiclass:
    /// argmax with ties broken toward the lowest class index.
    pub fn predict(&self, x: &[f64]) -> Result<usize> {
        let scores = self.score(x)?;
        match self.task {
            Task::Binary => Ok(if scores[0] > 0.0 { 1 } else { 0 }),
            Task::Multiclass(_) => Ok(argmax_lowest(&scores)),
        }
    }

    /// Classification margin. Binary: y * F(x) with y in {-1,+1}.
    /// Multiclass: true-class score minus the best other-class score.
    pub fn margin(&self, x: &[f64], label: usize) -> Result<f64> {
        let scores = self.score(x)?;
        match self.task {
            Task::Binary => {
                let y = if label == 1 { 1.0 } else { -1.0 };
                Ok(y * scores[0])
            }
            Task::Multiclass(_) => Ok(multiclass_margin(&scores, label)),
        }
    }

    /// Batch scores as an m x C matrix (C = 1 for binary).
    pub fn score_batch(&self, x: &Matrix) -> Result<Matrix> {
        let levels = propagate(&self.blocks, x)?;
        let top = &levels.last().unwrap().features;
        let c = match &self.final_classifier {
            FinalClassifier::Binary(_) => 1,
            FinalClassifier::Multiclass(w) => w.cols(),
        };
        let mut out = Matrix::zeros(x.rows(), c);
        for i in 0..x.rows() {
            let s = self.final_classifier.scores(top.row(i));
            out.row_mut(i).copy_from_slice(&s);
        }
        Ok(out)
    }
}

/// Argmax with ties broken toward the lowest index.
pub fn argmax_lowest(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

pub fn multiclass_margin(scores: &[f64], label: usize) -> f64 {
    let mut best_other = f64::NEG_INFINITY;
    for (l, &s) in scores.iter().enumerate() {
        if l != label && s > best_other {
            best_other = s;
        }
    }
    scores[label] - best_other
}

/// Per-round auxiliary classifier and its weight, kept for diagnostics.
/// Entry t holds (alpha_{t+1}, w_{t+1}), the classifier trained at round t
/// and applied to level t+1 features.
#[derive(Debug, Clone)]
pub struct AuxRound {
    pub alpha: f64,
    pub classifier: FinalClassifier,
}

/// Verify the telescoping identity: the sum of the weak module classifiers
/// h_t = alpha_{t+1} o_{t+1} - alpha_t o_t collapses to alpha_{T+1} F(x).
///
/// Returns the max over examples (and classes) of
/// |sum_t h_t - alpha_{T+1} F| / (1 + |alpha_{T+1} F|).
pub fn telescoping_check(
    net: &TrainedResNet,
    history: &[AuxRound],
    x: &Matrix,
) -> Result<f64> {
    if history.len() != net.blocks.len() + 1 {
        return Err(Error::Dimension(format!(
            "history has {} rounds, expected {} for a depth-{} network",
            history.len(),
            net.blocks.len() + 1,
            net.blocks.len()
        )));
    }
    let levels = propagate(&net.blocks, x)?;
    let m = x.rows();
    let c = match net.task {
        Task::Binary => 1,
        Task::Multiclass(c) => c,
    };

    // o_{t+1}(x_i): history[t] applied to level t+1 features. For the
    // multiclass pipeline the hypothesis is the softmax of the class scores.
    let hypothesis = |round: usize, i: usize| -> Vec<f64> {
        let scores = history[round].classifier.scores(levels[round].features.row(i));
        match net.task {
            Task::Binary => scores,
            Task::Multiclass(_) => softmax(&scores),
        }
    };

    let mut max_disc: f64 = 0.0;
    for i in 0..m {
        let mut sum_h = vec![0.0; c];
        let mut prev = vec![0.0; c]; // alpha_0 * o_0 = 0
        let mut prev_alpha = 0.0;
        for (t, round) in history.iter().enumerate() {
            let o = hypothesis(t, i);
            for l in 0..c {
                sum_h[l] += round.alpha * o[l] - prev_alpha * prev[l];
            }
            prev = o;
            prev_alpha = round.alpha;
        }
        // Right-hand side: alpha_{T+1} times the network output in the same
        // hypothesis space as the ensemble.
        let top_scores = net.final_classifier.scores(levels.last().unwrap().features.row(i));
        let rhs_vals = match net.task {
            Task::Binary => top_scores,
            Task::Multiclass(_) => softmax(&top_scores),
        };
        for l in 0..c {
            let rhs = net.alpha_final * rhs_vals[l];
            let disc = (sum_h[l] - rhs).abs() / (1.0 + rhs.abs());
            max_disc = max_disc.max(disc);
        }
    }
    Ok(max_disc)
}
