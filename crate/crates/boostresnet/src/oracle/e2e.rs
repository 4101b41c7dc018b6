//! End-to-end backprop baseline: train every block and the output classifier
//! jointly under logistic (binary) or softmax cross-entropy (multiclass)
//! loss, recording per-epoch train/test accuracy for depth sweeps.

use super::core::{mbt, mm, mtm};
use super::train::{clip_grad_norm, rel_err, Adam};
use super::OracleConfig;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::numkit::{Matrix, Rng, Vector};
use crate::resnet::{argmax_lowest, FinalClassifier, ResidualBlock, Task, TrainedResNet};

const DIVERGENCE_LOSS: f64 = 1e6;

/// Full-stack parameters for the end-to-end trainer: T blocks plus the
/// output classifier (an n-vector for binary, n x C for multiclass).
#[derive(Debug, Clone)]
pub struct E2eParams {
    pub blocks: Vec<ResidualBlock>,
    pub head: FinalClassifier,
}

#[derive(Debug, Clone)]
pub struct E2eGrads {
    pub blocks: Vec<(Matrix, Matrix)>,
    pub head: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub test_acc: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct E2eResult {
    pub net: TrainedResNet,
    pub epochs: Vec<EpochRecord>,
    /// Max relative error of the analytic full-stack gradient against central
    /// differences, measured at initialization on a small batch.
    pub grad_check: f64,
}

struct StackLayout {
    n: usize,
    k: usize,
    t: usize,
    c: usize, // 1 for binary
}

impl StackLayout {
    fn block_offset(&self, b: usize) -> usize {
        b * (self.n * self.k + self.k * self.n)
    }
    fn w_in(&self, b: usize) -> std::ops::Range<usize> {
        let s = self.block_offset(b);
        s..s + self.n * self.k
    }
    fn w_out(&self, b: usize) -> std::ops::Range<usize> {
        let s = self.block_offset(b) + self.n * self.k;
        s..s + self.k * self.n
    }
    fn head(&self) -> std::ops::Range<usize> {
        let s = self.block_offset(self.t);
        s..s + self.n * self.c
    }
    fn len(&self) -> usize {
        self.head().end
    }
    fn param_name(&self, idx: usize) -> String {
        for b in 0..self.t {
            if self.w_in(b).contains(&idx) {
                return format!("block{b}.w_in");
            }
            if self.w_out(b).contains(&idx) {
                return format!("block{b}.w_out");
            }
        }
        "head".to_string()
    }
}

/// Forward through the stack; returns all levels (t+1 of them) and the
/// hidden activations needed for backprop.
fn forward_stack(
    params: &[f64],
    lay: &StackLayout,
    x: &[f64],
    m: usize,
) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let n = lay.n;
    let k = lay.k;
    let mut levels = Vec::with_capacity(lay.t + 1);
    levels.push(x.to_vec());
    let mut hiddens = Vec::with_capacity(lay.t);
    for b in 0..lay.t {
        let z = levels.last().unwrap();
        let mut hid = vec![0.0; m * k];
        mm(&mut hid, z, &params[lay.w_in(b)], m, n, k);
        for v in hid.iter_mut() {
            *v = v.max(0.0);
        }
        let mut out = vec![0.0; m * n];
        mm(&mut out, &hid, &params[lay.w_out(b)], m, k, n);
        for (o, &zv) in out.iter_mut().zip(z.iter()) {
            *o += zv;
        }
        hiddens.push(hid);
        levels.push(out);
    }
    (levels, hiddens)
}

fn stable_log1p_exp(z: f64) -> f64 {
    // ln(1 + e^z) without overflow
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Loss and (optionally) gradients for the whole stack on one batch.
fn eval_stack(
    params: &[f64],
    lay: &StackLayout,
    x: &[f64],
    m: usize,
    labels: &[usize],
    mut grad: Option<&mut [f64]>,
) -> f64 {
    let n = lay.n;
    let k = lay.k;
    let c = lay.c;
    let (levels, hiddens) = forward_stack(params, lay, x, m);
    let top = levels.last().unwrap();
    let head = &params[lay.head()];
    let mut scores = vec![0.0; m * c];
    mm(&mut scores, top, head, m, n, c);

    let mut loss = 0.0;
    let mut dscores = vec![0.0; m * c];
    if c == 1 {
        for i in 0..m {
            let y = if labels[i] == 1 { 1.0 } else { -1.0 };
            let z = -y * scores[i];
            loss += stable_log1p_exp(z);
            dscores[i] = -y * sigmoid(z) / m as f64;
        }
    } else {
        for i in 0..m {
            let row = &scores[i * c..(i + 1) * c];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = row.iter().map(|&s| (s - max).exp()).sum();
            let lse = max + sum.ln();
            loss += lse - row[labels[i]];
            for l in 0..c {
                let p = (row[l] - lse).exp();
                dscores[i * c + l] = (p - if l == labels[i] { 1.0 } else { 0.0 }) / m as f64;
            }
        }
    }
    loss /= m as f64;

    let grad_out = match grad.as_deref_mut() {
        Some(g) => g,
        None => return loss,
    };
    grad_out.fill(0.0);

    // head gradient: top^T * dscores
    {
        let mut buf = vec![0.0; n * c];
        mtm(&mut buf, top, &dscores, m, n, c);
        grad_out[lay.head()].copy_from_slice(&buf);
    }
    // gradient flowing into the top representation: dscores * head^T
    let mut dz = vec![0.0; m * n];
    mbt(&mut dz, &dscores, head, m, c, n);

    // walk blocks top-down
    for b in (0..lay.t).rev() {
        let z = &levels[b];
        let hid = &hiddens[b];
        // d_w_out = hid^T * dz
        {
            let mut buf = vec![0.0; k * n];
            mtm(&mut buf, hid, &dz, m, k, n);
            grad_out[lay.w_out(b)].copy_from_slice(&buf);
        }
        // d_hidden = (dz * w_out^T) masked
        let mut dhid = vec![0.0; m * k];
        mbt(&mut dhid, &dz, &params[lay.w_out(b)], m, n, k);
        for (dh, &h) in dhid.iter_mut().zip(hid.iter()) {
            if h <= 0.0 {
                *dh = 0.0;
            }
        }
        // d_w_in = z^T * d_hidden
        {
            let mut buf = vec![0.0; n * k];
            mtm(&mut buf, z, &dhid, m, n, k);
            grad_out[lay.w_in(b)].copy_from_slice(&buf);
        }
        // identity path plus module path
        let mut dz_next = vec![0.0; m * n];
        mbt(&mut dz_next, &dhid, &params[lay.w_in(b)], m, k, n);
        for (a, &b2) in dz_next.iter_mut().zip(dz.iter()) {
            *a += b2;
        }
        dz = dz_next;
    }
    loss
}

fn params_to_flat(p: &E2eParams, lay: &StackLayout) -> Vec<f64> {
    let mut out = vec![0.0; lay.len()];
    for (b, block) in p.blocks.iter().enumerate() {
        out[lay.w_in(b)].copy_from_slice(block.w_in().data());
        out[lay.w_out(b)].copy_from_slice(block.w_out().data());
    }
    match &p.head {
        FinalClassifier::Binary(w) => out[lay.head()].copy_from_slice(w.as_slice()),
        FinalClassifier::Multiclass(w) => out[lay.head()].copy_from_slice(w.data()),
    }
    out
}

fn layout_for(p: &E2eParams, n: usize) -> StackLayout {
    StackLayout {
        n,
        k: p.blocks.first().map_or(0, |b| b.k()),
        t: p.blocks.len(),
        c: match &p.head {
            FinalClassifier::Binary(_) => 1,
            FinalClassifier::Multiclass(w) => w.cols(),
        },
    }
}

/// Mean logistic / softmax cross-entropy loss of the full stack.
pub fn e2e_loss(params: &E2eParams, x: &Matrix, y: &[usize]) -> Result<f64> {
    if x.rows() != y.len() {
        return Err(Error::Dimension("e2e_loss: rows vs labels".into()));
    }
    let lay = layout_for(params, x.cols());
    let flat = params_to_flat(params, &lay);
    Ok(eval_stack(&flat, &lay, x.data(), x.rows(), y, None))
}

/// Loss plus analytic gradients for every block and the head.
pub fn e2e_loss_and_grad(params: &E2eParams, x: &Matrix, y: &[usize]) -> Result<(f64, E2eGrads)> {
    if x.rows() != y.len() {
        return Err(Error::Dimension("e2e_loss_and_grad: rows vs labels".into()));
    }
    let lay = layout_for(params, x.cols());
    let flat = params_to_flat(params, &lay);
    let mut grad = vec![0.0; lay.len()];
    let loss = eval_stack(&flat, &lay, x.data(), x.rows(), y, Some(&mut grad));
    if let Some(pos) = grad.iter().position(|v| !v.is_finite()) {
        return Err(Error::Numerical(format!(
            "non-finite gradient in parameter '{}'",
            lay.param_name(pos)
        )));
    }
    let blocks = (0..lay.t)
        .map(|b| {
            Ok((
                Matrix::from_vec(lay.n, lay.k, grad[lay.w_in(b)].to_vec())?,
                Matrix::from_vec(lay.k, lay.n, grad[lay.w_out(b)].to_vec())?,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((
        loss,
        E2eGrads {
            blocks,
            head: grad[lay.head()].to_vec(),
        },
    ))
}

fn accuracy(params: &[f64], lay: &StackLayout, ds: &Dataset) -> f64 {
    let (levels, _) = forward_stack(params, lay, ds.x.data(), ds.m());
    let top = levels.last().unwrap();
    let head = &params[lay.head()];
    let mut scores = vec![0.0; ds.m() * lay.c];
    mm(&mut scores, top, head, ds.m(), lay.n, lay.c);
    let mut correct = 0usize;
    for i in 0..ds.m() {
        let pred = if lay.c == 1 {
            if scores[i] > 0.0 {
                1
            } else {
                0
            }
        } else {
            argmax_lowest(&scores[i * lay.c..(i + 1) * lay.c])
        };
        if pred == ds.y[i] {
            correct += 1;
        }
    }
    correct as f64 / ds.m() as f64
}

/// Train a depth-`t` stack end to end. `k` is the hidden width of every
/// block; `t = 0` reduces to plain (multinomial) logistic regression.
pub fn train_e2e(
    train: &Dataset,
    test: Option<&Dataset>,
    k: usize,
    t: usize,
    task: Task,
    cfg: &OracleConfig,
) -> Result<E2eResult> {
    cfg.validate()?;
    let n = train.n();
    let m = train.m();
    let c = match task {
        Task::Binary => 1,
        Task::Multiclass(c) => c,
    };
    if task.classes() != train.n_classes {
        return Err(Error::Config(format!(
            "task expects {} classes, dataset has {}",
            task.classes(),
            train.n_classes
        )));
    }
    let lay = StackLayout { n, k, t, c };

    let mut init_rng = Rng::with_stream(cfg.seed, "e2e-init");
    let mut params = vec![0.0; lay.len()];
    let sd_in = cfg.init_scale / (n as f64).sqrt();
    let sd_out = 0.1 * cfg.init_scale / (k.max(1) as f64).sqrt();
    for b in 0..t {
        for p in &mut params[lay.w_in(b)] {
            *p = init_rng.gaussian() * sd_in;
        }
        for p in &mut params[lay.w_out(b)] {
            *p = init_rng.gaussian() * sd_out;
        }
    }
    for p in &mut params[lay.head()] {
        *p = init_rng.gaussian() * sd_in;
    }

    let grad_check = stack_gradient_check(
        &params,
        &lay,
        train,
        m.min(16),
        &mut Rng::with_stream(cfg.seed, "e2e-gradcheck"),
    );

    let mut adam = Adam::new(lay.len());
    let mut shuffle_rng = Rng::with_stream(cfg.seed, "e2e-shuffle");
    let mut order: Vec<usize> = (0..m).collect();
    let mut grad = vec![0.0; lay.len()];
    let mut records = Vec::with_capacity(cfg.epochs);
    let mut batch_x = vec![0.0; cfg.batch_size.min(m) * n];
    let mut stalled = 0usize;
    let mut best_loss = f64::INFINITY;

    for epoch in 0..cfg.epochs {
        let lr = cfg.learning_rate / (1.0 + cfg.lr_decay * epoch as f64);
        shuffle_rng.shuffle(&mut order);
        let mut start = 0;
        while start < m {
            let end = (start + cfg.batch_size).min(m);
            let bsz = end - start;
            let bx = &mut batch_x[..bsz * n];
            let mut by = Vec::with_capacity(bsz);
            for (bi, &i) in order[start..end].iter().enumerate() {
                bx[bi * n..(bi + 1) * n].copy_from_slice(train.x.row(i));
                by.push(train.y[i]);
            }
            eval_stack(&params, &lay, bx, bsz, &by, Some(&mut grad));
            if let Some(pos) = grad.iter().position(|v| !v.is_finite()) {
                return Err(Error::Oracle {
                    round: epoch,
                    message: format!(
                        "non-finite gradient in parameter '{}'",
                        lay.param_name(pos)
                    ),
                });
            }
            clip_grad_norm(&mut grad, cfg.max_grad_norm);
            adam.step(&mut params, &grad, lr);
            start = end;
        }

        let train_loss = eval_stack(&params, &lay, train.x.data(), m, &train.y, None);
        if !train_loss.is_finite() || train_loss > DIVERGENCE_LOSS {
            return Err(Error::Oracle {
                round: epoch,
                message: format!("divergent loss {train_loss} at epoch {epoch}"),
            });
        }
        let record = EpochRecord {
            epoch,
            train_loss,
            train_acc: accuracy(&params, &lay, train),
            test_acc: test.map(|ts| accuracy(&params, &lay, ts)),
        };
        records.push(record);
        if let Some(es) = &cfg.early_stop {
            if train_loss < best_loss {
                let improvement = (best_loss - train_loss) / best_loss.max(f64::MIN_POSITIVE);
                best_loss = train_loss;
                stalled = if improvement < es.min_rel_improvement { stalled + 1 } else { 0 };
            } else {
                stalled += 1;
            }
            if stalled >= es.patience {
                break;
            }
        } else {
            best_loss = best_loss.min(train_loss);
        }
    }

    let blocks = (0..t)
        .map(|b| {
            ResidualBlock::new(
                Matrix::from_vec(n, k, params[lay.w_in(b)].to_vec())?,
                Matrix::from_vec(k, n, params[lay.w_out(b)].to_vec())?,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let head = match task {
        Task::Binary => FinalClassifier::Binary(Vector::from_vec(params[lay.head()].to_vec())),
        Task::Multiclass(_) => {
            FinalClassifier::Multiclass(Matrix::from_vec(n, c, params[lay.head()].to_vec())?)
        }
    };
    Ok(E2eResult {
        net: TrainedResNet {
            task,
            n,
            k,
            blocks,
            final_classifier: head,
            alpha_final: 1.0,
        },
        epochs: records,
        grad_check,
    })
}

fn stack_gradient_check(
    params: &[f64],
    lay: &StackLayout,
    train: &Dataset,
    m_check: usize,
    rng: &mut Rng,
) -> f64 {
    let x: Vec<f64> = train.x.data()[..m_check * lay.n].to_vec();
    let y: Vec<usize> = train.y[..m_check].to_vec();
    let mut grad = vec![0.0; lay.len()];
    eval_stack(params, lay, &x, m_check, &y, Some(&mut grad));

    let mut coords = Vec::new();
    for b in 0..lay.t {
        coords.push(lay.w_in(b).start + rng.next_usize(lay.w_in(b).len()));
        coords.push(lay.w_out(b).start + rng.next_usize(lay.w_out(b).len()));
    }
    for _ in 0..3 {
        coords.push(lay.head().start + rng.next_usize(lay.head().len()));
    }

    let mut probe = params.to_vec();
    let h = 1e-5;
    let mut max_err: f64 = 0.0;
    for &idx in &coords {
        let orig = probe[idx];
        probe[idx] = orig + h;
        let fp = eval_stack(&probe, lay, &x, m_check, &y, None);
        probe[idx] = orig - h;
        let fm = eval_stack(&probe, lay, &x, m_check, &y, None);
        probe[idx] = orig;
        max_err = max_err.max(rel_err(grad[idx], (fp - fm) / (2.0 * h)));
    }
    max_err
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::make_blobs;

    #[test]
    fn depth_zero_is_logistic_regression_on_blobs() {
        let train = make_blobs(200, 2, 2, 10.0, 21).unwrap();
        let cfg = OracleConfig {
            learning_rate: 0.1,
            epochs: 60,
            batch_size: 32,
            seed: 2,
            ..OracleConfig::default()
        };
        let res = train_e2e(&train, None, 0, 0, Task::Binary, &cfg).unwrap();
        let last = res.epochs.last().unwrap();
        assert!(last.train_acc >= 0.99, "accuracy {}", last.train_acc);
    }

    #[test]
    fn zero_init_blocks_stay_identity() {
        // With init_scale = 0 the module path is dead (relu of zeros) and
        // gradients through it vanish, so the stack remains a linear model.
        let train = make_blobs(60, 2, 2, 8.0, 4).unwrap();
        let cfg = OracleConfig {
            learning_rate: 0.05,
            epochs: 3,
            batch_size: 16,
            init_scale: 0.0,
            seed: 9,
            ..OracleConfig::default()
        };
        let res = train_e2e(&train, None, 4, 2, Task::Binary, &cfg).unwrap();
        for block in &res.net.blocks {
            assert!(block.w_in().data().iter().all(|&v| v == 0.0));
            assert!(block.w_out().data().iter().all(|&v| v == 0.0));
        }
        // identity blocks: score equals the bare linear head
        let w = match &res.net.final_classifier {
            FinalClassifier::Binary(w) => w.clone(),
            _ => unreachable!(),
        };
        let x = [0.3, -1.1];
        let lin: f64 = w.as_slice().iter().zip(&x).map(|(a, b)| a * b).sum();
        assert_eq!(res.net.score(&x).unwrap()[0], lin);
    }

    #[test]
    fn multiclass_depth_zero_fits_blobs() {
        let train = make_blobs(150, 2, 3, 9.0, 31).unwrap();
        let cfg = OracleConfig {
            learning_rate: 0.1,
            epochs: 60,
            batch_size: 32,
            seed: 6,
            ..OracleConfig::default()
        };
        let res = train_e2e(&train, None, 0, 0, Task::Multiclass(3), &cfg).unwrap();
        assert!(res.epochs.last().unwrap().train_acc >= 0.98);
    }

    #[test]
    fn records_one_entry_per_epoch_with_test_accuracy() {
        let train = make_blobs(40, 2, 2, 6.0, 1).unwrap();
        let test = make_blobs(20, 2, 2, 6.0, 2).unwrap();
        let cfg = OracleConfig {
            epochs: 5,
            batch_size: 8,
            seed: 1,
            ..OracleConfig::default()
        };
        let res = train_e2e(&train, Some(&test), 3, 1, Task::Binary, &cfg).unwrap();
        assert_eq!(res.epochs.len(), 5);
        assert!(res.epochs.iter().all(|r| r.test_acc.is_some()));
    }
}
