//! Flat-parameter evaluation core for the block-training subproblem.
//!
//! Parameters live in one flat vector so the optimizer, gradient clipping,
//! snapshots, and finite-difference checks all operate on plain slices.
//! Layout: [w_in (n*k)] [w_out (k*n)] [aux (n*c)] [log_alpha], with the block
//! part absent at round 0. The stored alpha coordinate is log(alpha) so joint
//! optimization keeps alpha positive; gradients are reported w.r.t. alpha
//! itself and the trainer chains through the exponential.

use std::ops::Range;

#[derive(Debug, Clone, Copy)]
pub(crate) struct SubLayout {
    pub n: usize,
    pub k: usize,
    pub c: usize,
    pub has_block: bool,
}

impl SubLayout {
    pub fn w_in(&self) -> Range<usize> {
        if self.has_block {
            0..self.n * self.k
        } else {
            0..0
        }
    }

    pub fn w_out(&self) -> Range<usize> {
        let s = self.w_in().end;
        if self.has_block {
            s..s + self.k * self.n
        } else {
            s..s
        }
    }

    pub fn aux(&self) -> Range<usize> {
        let s = self.w_out().end;
        s..s + self.n * self.c
    }

    pub fn log_alpha(&self) -> usize {
        self.aux().end
    }

    pub fn len(&self) -> usize {
        self.log_alpha() + 1
    }

    pub fn param_name(&self, idx: usize) -> &'static str {
        if self.w_in().contains(&idx) {
            "w_in"
        } else if self.w_out().contains(&idx) {
            "w_out"
        } else if self.aux().contains(&idx) {
            "aux"
        } else {
            "alpha"
        }
    }
}

/// Labels as the subproblem sees them.
pub(crate) enum TaskLabels<'a> {
    /// Signed labels in {-1, +1}.
    Binary(&'a [f64]),
    /// Class indices in 0..C.
    Multiclass(&'a [usize]),
}

pub(crate) struct LossOut {
    pub loss: f64,
    pub log_loss: f64,
}

// out = a (m x p) * b (p x q), overwriting out
pub(crate) fn mm(out: &mut [f64], a: &[f64], b: &[f64], m: usize, p: usize, q: usize) {
    out.fill(0.0);
    for i in 0..m {
        let arow = &a[i * p..(i + 1) * p];
        let orow = &mut out[i * q..(i + 1) * q];
        for (kk, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let brow = &b[kk * q..(kk + 1) * q];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

// out = a^T * b where a is m x p and b is m x q; out is p x q, overwritten
pub(crate) fn mtm(out: &mut [f64], a: &[f64], b: &[f64], m: usize, p: usize, q: usize) {
    out.fill(0.0);
    for i in 0..m {
        let arow = &a[i * p..(i + 1) * p];
        let brow = &b[i * q..(i + 1) * q];
        for (pp, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let orow = &mut out[pp * q..(pp + 1) * q];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

// out = a (m x p) * b^T (q x p); out is m x q, overwritten
pub(crate) fn mbt(out: &mut [f64], a: &[f64], b: &[f64], m: usize, p: usize, q: usize) {
    for i in 0..m {
        let arow = &a[i * p..(i + 1) * p];
        for j in 0..q {
            let brow = &b[j * p..(j + 1) * p];
            let mut acc = 0.0;
            for (&x, &y) in arow.iter().zip(brow) {
                acc += x * y;
            }
            out[i * q + j] = acc;
        }
    }
}

/// Which function the returned gradients differentiate. The log domain
/// rescales by 1/loss: identical minimizers and directions, but the
/// per-term weights are normalized (they sum to 1), so gradients stay
/// finite through arbitrarily bad transients.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum GradDomain {
    Loss,
    LogLoss,
}

/// Evaluate the exponential-loss subproblem, optionally with gradients.
///
/// `g` is the m x n feature batch. The returned loss is the mean over
/// examples (binary) or the sum normalized by m*(C-1) (multiclass); both are
/// computed through a single log-sum-exp so extreme scores stay finite in
/// the log domain. Gradients are written into `grad` (same layout; the
/// alpha slot receives the derivative w.r.t. alpha, not log alpha).
pub(crate) fn eval_subproblem(
    params: &[f64],
    lay: SubLayout,
    g: &[f64],
    m: usize,
    labels: &TaskLabels,
    grad: Option<&mut [f64]>,
) -> LossOut {
    eval_subproblem_in(params, lay, g, m, labels, grad, GradDomain::Loss)
}

pub(crate) fn eval_subproblem_in(
    params: &[f64],
    lay: SubLayout,
    g: &[f64],
    m: usize,
    labels: &TaskLabels,
    mut grad: Option<&mut [f64]>,
    domain: GradDomain,
) -> LossOut {
    let n = lay.n;
    let k = lay.k;
    let c = lay.c;
    let alpha = params[lay.log_alpha()].exp();
    let aux = &params[lay.aux()];

    // ---- forward ----
    let (hidden, fplusg): (Option<Vec<f64>>, Vec<f64>) = if lay.has_block {
        let w_in = &params[lay.w_in()];
        let w_out = &params[lay.w_out()];
        let mut hid = vec![0.0; m * k];
        mm(&mut hid, g, w_in, m, n, k);
        for v in hid.iter_mut() {
            *v = v.max(0.0);
        }
        let mut fg = vec![0.0; m * n];
        mm(&mut fg, &hid, w_out, m, k, n);
        for (o, &x) in fg.iter_mut().zip(g) {
            *o += x;
        }
        (Some(hid), fg)
    } else {
        (None, g.to_vec())
    };

    // class scores: m x c
    let mut scores = vec![0.0; m * c];
    mm(&mut scores, &fplusg, aux, m, n, c);

    // ---- loss (log domain) and per-term weights ----
    // exponents[i*c + l] participates when active; weight w = exp(e - lse).
    let mut exponents = vec![f64::NEG_INFINITY; m * c];
    let norm_count: f64;
    match labels {
        TaskLabels::Binary(ys) => {
            norm_count = m as f64;
            for i in 0..m {
                exponents[i] = -ys[i] * alpha * scores[i];
            }
        }
        TaskLabels::Multiclass(ys) => {
            norm_count = (m * (c - 1)) as f64;
            for i in 0..m {
                let sy = scores[i * c + ys[i]];
                for l in 0..c {
                    if l != ys[i] {
                        exponents[i * c + l] = alpha * (scores[i * c + l] - sy);
                    }
                }
            }
        }
    }
    let max_e = exponents
        .iter()
        .copied()
        .filter(|e| e.is_finite())
        .fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for &e in &exponents {
        if e.is_finite() {
            sum += (e - max_e).exp();
        }
    }
    let lse = max_e + sum.ln();
    let log_loss = lse - norm_count.ln();
    let loss = log_loss.exp();

    let grad_out = match grad.as_deref_mut() {
        Some(gr) => gr,
        None => return LossOut { loss, log_loss },
    };
    grad_out.fill(0.0);

    // ---- backward ----
    // dLoss/dExponent = exp(e - lse) * loss; in the log domain the loss
    // factor drops and the weights exp(e - lse) sum to exactly 1.
    let scale = match domain {
        GradDomain::Loss => loss,
        GradDomain::LogLoss => 1.0,
    };
    let mut dscores = vec![0.0; m * c];
    let mut d_alpha = 0.0;
    match labels {
        TaskLabels::Binary(ys) => {
            for i in 0..m {
                let u = (exponents[i] - lse).exp() * scale;
                dscores[i] = u * (-ys[i] * alpha);
                d_alpha += u * (-ys[i] * scores[i]);
            }
        }
        TaskLabels::Multiclass(ys) => {
            for i in 0..m {
                let y = ys[i];
                let sy = scores[i * c + y];
                let mut qy = 0.0;
                for l in 0..c {
                    if l == y {
                        continue;
                    }
                    let u = (exponents[i * c + l] - lse).exp() * scale;
                    dscores[i * c + l] = u * alpha;
                    qy -= u * alpha;
                    d_alpha += u * (scores[i * c + l] - sy);
                }
                dscores[i * c + y] = qy;
            }
        }
    }
    grad_out[lay.log_alpha()] = d_alpha;

    // d_aux = fplusg^T * dscores
    {
        let (head, _) = grad_out.split_at_mut(lay.aux().end);
        let d_aux = &mut head[lay.aux().start..];
        mtm(d_aux, &fplusg, &dscores, m, n, c);
    }

    if lay.has_block {
        let hidden = hidden.as_ref().unwrap();
        let w_out = &params[lay.w_out()];
        let aux_mat = aux;

        // dfg = dscores * aux^T  (m x n)
        let mut dfg = vec![0.0; m * n];
        mbt(&mut dfg, &dscores, aux_mat, m, c, n);
        // note aux is n x c, so aux^T is c x n: mbt wants b as q x p with
        // p = c, q = n -> b[j*p + l] = aux[j*c + l]. That is exactly the
        // row-major n x c buffer read j-major, which matches.

        // d_w_out = hidden^T * dfg  (k x n)
        {
            let range = lay.w_out();
            let mut buf = vec![0.0; k * n];
            mtm(&mut buf, hidden, &dfg, m, k, n);
            grad_out[range].copy_from_slice(&buf);
        }

        // d_hidden = (dfg * w_out^T) masked by relu'  (m x k)
        let mut d_hidden = vec![0.0; m * k];
        mbt(&mut d_hidden, &dfg, w_out, m, n, k);
        for (dh, &h) in d_hidden.iter_mut().zip(hidden) {
            if h <= 0.0 {
                *dh = 0.0;
            }
        }

        // d_w_in = g^T * d_hidden  (n x k)
        {
            let range = lay.w_in();
            let mut buf = vec![0.0; n * k];
            mtm(&mut buf, g, &d_hidden, m, n, k);
            grad_out[range].copy_from_slice(&buf);
        }
    }

    LossOut { loss, log_loss }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_offsets_partition_the_vector() {
        let lay = SubLayout { n: 3, k: 2, c: 4, has_block: true };
        assert_eq!(lay.w_in(), 0..6);
        assert_eq!(lay.w_out(), 6..12);
        assert_eq!(lay.aux(), 12..24);
        assert_eq!(lay.log_alpha(), 24);
        assert_eq!(lay.len(), 25);
        assert_eq!(lay.param_name(0), "w_in");
        assert_eq!(lay.param_name(7), "w_out");
        assert_eq!(lay.param_name(13), "aux");
        assert_eq!(lay.param_name(24), "alpha");
    }

    #[test]
    fn no_block_layout() {
        let lay = SubLayout { n: 3, k: 2, c: 1, has_block: false };
        assert_eq!(lay.w_in(), 0..0);
        assert_eq!(lay.aux(), 0..3);
        assert_eq!(lay.len(), 4);
    }

    #[test]
    fn mbt_matches_hand_example() {
        // a = [[1,2],[3,4]] (2x2), b = [[5,6],[7,8]] (2x2); a*b^T
        let a = [1.0, 2.0, 3.0, 4.0];
        let b = [5.0, 6.0, 7.0, 8.0];
        let mut out = [0.0; 4];
        mbt(&mut out, &a, &b, 2, 2, 2);
        assert_eq!(out, [17.0, 23.0, 39.0, 53.0]);
    }
}
