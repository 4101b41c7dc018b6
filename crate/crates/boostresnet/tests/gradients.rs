//! Finite-difference verification of every analytic gradient path: the
//! binary and multiclass subproblem oracles and the full end-to-end stack.

use boostresnet::numkit::{Matrix, Rng, Vector};
use boostresnet::oracle::{
    e2e_loss, e2e_loss_and_grad, oracle_grad_binary, oracle_grad_multiclass, oracle_log_loss_binary,
    oracle_log_loss_multiclass, oracle_loss_binary, oracle_loss_multiclass, E2eParams,
};
use boostresnet::resnet::{FinalClassifier, ResidualBlock};

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-3)
}

fn random_block(rng: &mut Rng, n: usize, k: usize, scale: f64) -> ResidualBlock {
    let mut w_in = Matrix::zeros(n, k);
    let mut w_out = Matrix::zeros(k, n);
    rng.fill_gaussian(w_in.data_mut(), scale);
    rng.fill_gaussian(w_out.data_mut(), scale);
    ResidualBlock::new(w_in, w_out).unwrap()
}

fn random_batch(rng: &mut Rng, m: usize, n: usize) -> Matrix {
    let mut x = Matrix::zeros(m, n);
    rng.fill_gaussian(x.data_mut(), 1.0);
    x
}

const H: f64 = 1e-5;
const TOL: f64 = 1e-4;

#[test]
fn binary_oracle_gradients_match_finite_differences() {
    let mut rng = Rng::new(101);
    for point in 0..5 {
        let n = 3;
        let k = 2;
        let m = 5;
        let block = random_block(&mut rng, n, k, 0.8);
        let g = random_batch(&mut rng, m, n);
        let y: Vec<f64> = (0..m).map(|_| if rng.next_f64() < 0.5 { 1.0 } else { -1.0 }).collect();
        let mut v = vec![0.0; n];
        rng.fill_gaussian(&mut v, 1.0);
        let v = Vector::from_vec(v);
        let alpha = rng.uniform(0.3, 1.5);

        let grads = oracle_grad_binary(Some(&block), &v, alpha, &g, &y).unwrap();
        let mut max_err: f64 = 0.0;

        // w_in coordinates
        let gw_in = grads.w_in.as_ref().unwrap();
        for p in 0..n {
            for r in 0..k {
                let mut bp = block.clone();
                bp.w_in_mut().set(p, r, block.w_in().get(p, r) + H);
                let fp = oracle_loss_binary(Some(&bp), &v, alpha, &g, &y).unwrap();
                bp.w_in_mut().set(p, r, block.w_in().get(p, r) - H);
                let fm = oracle_loss_binary(Some(&bp), &v, alpha, &g, &y).unwrap();
                max_err = max_err.max(rel_err(gw_in.get(p, r), (fp - fm) / (2.0 * H)));
            }
        }
        // w_out coordinates
        let gw_out = grads.w_out.as_ref().unwrap();
        for r in 0..k {
            for j in 0..n {
                let mut bp = block.clone();
                bp.w_out_mut().set(r, j, block.w_out().get(r, j) + H);
                let fp = oracle_loss_binary(Some(&bp), &v, alpha, &g, &y).unwrap();
                bp.w_out_mut().set(r, j, block.w_out().get(r, j) - H);
                let fm = oracle_loss_binary(Some(&bp), &v, alpha, &g, &y).unwrap();
                max_err = max_err.max(rel_err(gw_out.get(r, j), (fp - fm) / (2.0 * H)));
            }
        }
        // classifier coordinates
        for p in 0..n {
            let mut vp = v.clone();
            vp.set(p, v.get(p) + H);
            let fp = oracle_loss_binary(Some(&block), &vp, alpha, &g, &y).unwrap();
            vp.set(p, v.get(p) - H);
            let fm = oracle_loss_binary(Some(&block), &vp, alpha, &g, &y).unwrap();
            max_err = max_err.max(rel_err(grads.aux[p], (fp - fm) / (2.0 * H)));
        }
        // alpha
        let fp = oracle_loss_binary(Some(&block), &v, alpha + H, &g, &y).unwrap();
        let fm = oracle_loss_binary(Some(&block), &v, alpha - H, &g, &y).unwrap();
        max_err = max_err.max(rel_err(grads.alpha, (fp - fm) / (2.0 * H)));

        assert!(max_err < TOL, "point {point}: max relative error {max_err}");
    }
}

#[test]
fn multiclass_oracle_gradients_match_finite_differences() {
    let mut rng = Rng::new(202);
    for point in 0..5 {
        let n = 3;
        let k = 2;
        let c = 3;
        let m = 5;
        let block = random_block(&mut rng, n, k, 0.8);
        let g = random_batch(&mut rng, m, n);
        let y: Vec<usize> = (0..m).map(|_| rng.next_usize(c)).collect();
        let mut v = Matrix::zeros(n, c);
        rng.fill_gaussian(v.data_mut(), 1.0);
        let alpha = rng.uniform(0.3, 1.2);

        let grads = oracle_grad_multiclass(Some(&block), &v, alpha, &g, &y).unwrap();
        let mut max_err: f64 = 0.0;

        for p in 0..n {
            for r in 0..k {
                let mut bp = block.clone();
                bp.w_in_mut().set(p, r, block.w_in().get(p, r) + H);
                let fp = oracle_loss_multiclass(Some(&bp), &v, alpha, &g, &y).unwrap();
                bp.w_in_mut().set(p, r, block.w_in().get(p, r) - H);
                let fm = oracle_loss_multiclass(Some(&bp), &v, alpha, &g, &y).unwrap();
                max_err = max_err.max(rel_err(
                    grads.w_in.as_ref().unwrap().get(p, r),
                    (fp - fm) / (2.0 * H),
                ));
            }
        }
        for r in 0..k {
            for j in 0..n {
                let mut bp = block.clone();
                bp.w_out_mut().set(r, j, block.w_out().get(r, j) + H);
                let fp = oracle_loss_multiclass(Some(&bp), &v, alpha, &g, &y).unwrap();
                bp.w_out_mut().set(r, j, block.w_out().get(r, j) - H);
                let fm = oracle_loss_multiclass(Some(&bp), &v, alpha, &g, &y).unwrap();
                max_err = max_err.max(rel_err(
                    grads.w_out.as_ref().unwrap().get(r, j),
                    (fp - fm) / (2.0 * H),
                ));
            }
        }
        for p in 0..n {
            for l in 0..c {
                let mut vp = v.clone();
                vp.set(p, l, v.get(p, l) + H);
                let fp = oracle_loss_multiclass(Some(&block), &vp, alpha, &g, &y).unwrap();
                vp.set(p, l, v.get(p, l) - H);
                let fm = oracle_loss_multiclass(Some(&block), &vp, alpha, &g, &y).unwrap();
                max_err = max_err.max(rel_err(grads.aux[p * c + l], (fp - fm) / (2.0 * H)));
            }
        }
        let fp = oracle_loss_multiclass(Some(&block), &v, alpha + H, &g, &y).unwrap();
        let fm = oracle_loss_multiclass(Some(&block), &v, alpha - H, &g, &y).unwrap();
        max_err = max_err.max(rel_err(grads.alpha, (fp - fm) / (2.0 * H)));

        assert!(max_err < TOL, "point {point}: max relative error {max_err}");
    }
}

#[test]
fn e2e_depth3_gradients_match_finite_differences() {
    let mut rng = Rng::new(303);
    for point in 0..5 {
        let n = 3;
        let k = 2;
        let m = 5;
        let blocks: Vec<ResidualBlock> = (0..3).map(|_| random_block(&mut rng, n, k, 0.6)).collect();
        let mut head = vec![0.0; n];
        rng.fill_gaussian(&mut head, 1.0);
        let params = E2eParams {
            blocks,
            head: FinalClassifier::Binary(Vector::from_vec(head)),
        };
        let x = random_batch(&mut rng, m, n);
        let y: Vec<usize> = (0..m).map(|_| rng.next_usize(2)).collect();

        let (_, grads) = e2e_loss_and_grad(&params, &x, &y).unwrap();
        let mut max_err: f64 = 0.0;

        for (b, (gin, gout)) in grads.blocks.iter().enumerate() {
            for p in 0..n {
                for r in 0..k {
                    let mut pp = params.clone();
                    pp.blocks[b].w_in_mut().set(p, r, params.blocks[b].w_in().get(p, r) + H);
                    let fp = e2e_loss(&pp, &x, &y).unwrap();
                    pp.blocks[b].w_in_mut().set(p, r, params.blocks[b].w_in().get(p, r) - H);
                    let fm = e2e_loss(&pp, &x, &y).unwrap();
                    max_err = max_err.max(rel_err(gin.get(p, r), (fp - fm) / (2.0 * H)));
                }
            }
            for r in 0..k {
                for j in 0..n {
                    let mut pp = params.clone();
                    pp.blocks[b].w_out_mut().set(r, j, params.blocks[b].w_out().get(r, j) + H);
                    let fp = e2e_loss(&pp, &x, &y).unwrap();
                    pp.blocks[b].w_out_mut().set(r, j, params.blocks[b].w_out().get(r, j) - H);
                    let fm = e2e_loss(&pp, &x, &y).unwrap();
                    max_err = max_err.max(rel_err(gout.get(r, j), (fp - fm) / (2.0 * H)));
                }
            }
        }
        let head_at = |p: usize, delta: f64| -> f64 {
            let mut pp = params.clone();
            if let FinalClassifier::Binary(w) = &mut pp.head {
                let orig = w.get(p);
                w.set(p, orig + delta);
            }
            e2e_loss(&pp, &x, &y).unwrap()
        };
        for p in 0..n {
            let fd = (head_at(p, H) - head_at(p, -H)) / (2.0 * H);
            max_err = max_err.max(rel_err(grads.head[p], fd));
        }

        assert!(max_err < TOL, "point {point}: max relative error {max_err}");
    }
}

#[test]
fn multiclass_e2e_gradients_match_finite_differences() {
    let mut rng = Rng::new(404);
    let n = 3;
    let k = 2;
    let c = 3;
    let m = 5;
    let blocks: Vec<ResidualBlock> = (0..2).map(|_| random_block(&mut rng, n, k, 0.6)).collect();
    let mut head = Matrix::zeros(n, c);
    rng.fill_gaussian(head.data_mut(), 1.0);
    let params = E2eParams {
        blocks,
        head: FinalClassifier::Multiclass(head.clone()),
    };
    let x = random_batch(&mut rng, m, n);
    let y: Vec<usize> = (0..m).map(|_| rng.next_usize(c)).collect();

    let (_, grads) = e2e_loss_and_grad(&params, &x, &y).unwrap();
    let mut max_err: f64 = 0.0;
    let head_at = |p: usize, l: usize, delta: f64| -> f64 {
        let mut pp = params.clone();
        if let FinalClassifier::Multiclass(w) = &mut pp.head {
            let orig = w.get(p, l);
            w.set(p, l, orig + delta);
        }
        e2e_loss(&pp, &x, &y).unwrap()
    };
    for p in 0..n {
        for l in 0..c {
            let fd = (head_at(p, l, H) - head_at(p, l, -H)) / (2.0 * H);
            max_err = max_err.max(rel_err(grads.head[p * c + l], fd));
        }
    }
    assert!(max_err < TOL, "max relative error {max_err}");
}

#[test]
fn loss_stabilization_survives_huge_uniform_shifts() {
    // Shift every score by +1000 via the classifier on an all-positive-label
    // instance; the log-domain losses must differ by exactly 1000 * alpha.
    let g = Matrix::from_rows(&[vec![1.0, 0.5], vec![1.0, -0.25], vec![1.0, 2.0]]).unwrap();
    let y = [1.0, 1.0, 1.0];
    let alpha = 0.8;
    let v = Vector::from_vec(vec![0.3, 0.6]);
    // shifting the first weight by 1000 adds 1000 to every score because
    // the first feature column is identically 1
    let v_shift = Vector::from_vec(vec![1000.3, 0.6]);
    let base = oracle_log_loss_binary(None, &v, alpha, &g, &y).unwrap();
    let shifted = oracle_log_loss_binary(None, &v_shift, alpha, &g, &y).unwrap();
    assert!(
        ((base - shifted) - 1000.0 * alpha).abs() < 1e-9,
        "log-domain shift mismatch: {} vs {}",
        base - shifted,
        1000.0 * alpha
    );

    // multiclass: score differences are shift-invariant, so the loss is
    // exactly unchanged when every class score moves together
    let yc = [0usize, 1, 0];
    let vm = Matrix::from_rows(&[vec![0.2, -0.1], vec![0.4, 0.9]]).unwrap();
    let mut vm_shift = vm.clone();
    for l in 0..2 {
        vm_shift.set(0, l, vm.get(0, l) + 1000.0);
    }
    let base = oracle_log_loss_multiclass(None, &vm, alpha, &g, &yc).unwrap();
    let shifted = oracle_log_loss_multiclass(None, &vm_shift, alpha, &g, &yc).unwrap();
    assert!((base - shifted).abs() < 1e-9, "{base} vs {shifted}");
}

#[test]
fn multiclass_c2_reduces_to_binary_loss() {
    // With v = (col0 - col1)/2 and doubled alpha, the two losses agree
    // (class 0 maps to the positive label).
    let mut rng = Rng::new(909);
    let n = 3;
    let m = 6;
    let block = random_block(&mut rng, n, 2, 0.7);
    let g = random_batch(&mut rng, m, n);
    let yc: Vec<usize> = (0..m).map(|_| rng.next_usize(2)).collect();
    let ys: Vec<f64> = yc.iter().map(|&l| if l == 0 { 1.0 } else { -1.0 }).collect();
    let mut vm = Matrix::zeros(n, 2);
    rng.fill_gaussian(vm.data_mut(), 1.0);
    let alpha = 0.6;

    let vb = Vector::from_vec(
        (0..n).map(|p| (vm.get(p, 0) - vm.get(p, 1)) / 2.0).collect(),
    );
    let mc = oracle_loss_multiclass(Some(&block), &vm, alpha, &g, &yc).unwrap();
    let bin = oracle_loss_binary(Some(&block), &vb, 2.0 * alpha, &g, &ys).unwrap();
    assert!((mc - bin).abs() < 1e-10, "{mc} vs {bin}");
}
