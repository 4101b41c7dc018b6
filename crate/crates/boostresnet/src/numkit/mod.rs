//! Minimal dense linear algebra, reproducible RNG, and numerical
//! differentiation. Everything else in the crate is built on this module.
//!
//! All arithmetic is 64-bit: the quantities verified downstream (products of
//! per-round normalizers, exponential losses) are sensitive to drift at depth.

mod matrix;
mod rng;
mod vector;

pub use matrix::Matrix;
pub use rng::Rng;
pub use vector::{dot, relu, relu_grad, softmax, Vector};

use crate::error::{Error, Result};

/// Central-difference gradient of a scalar function, one coordinate at a time.
pub fn finite_diff_grad<F>(f: F, x: &Vector, h: f64) -> Result<Vector>
where
    F: Fn(&Vector) -> f64,
{
    if h <= 0.0 {
        return Err(Error::Dimension(format!("finite_diff_grad: h must be > 0, got {h}")));
    }
    let mut grad = vec![0.0; x.len()];
    let mut probe = x.clone();
    for i in 0..x.len() {
        let orig = probe.get(i);
        probe.set(i, orig + h);
        let fp = f(&probe);
        probe.set(i, orig - h);
        let fm = f(&probe);
        probe.set(i, orig);
        if !fp.is_finite() || !fm.is_finite() {
            return Err(Error::Numerical(format!(
                "finite_diff_grad: non-finite function value at coordinate {i}"
            )));
        }
        grad[i] = (fp - fm) / (2.0 * h);
    }
    Ok(Vector::from_vec(grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vec2(a: f64, b: f64) -> Vector {
        Vector::from_vec(vec![a, b])
    }

    #[test]
    fn matvec_identity() {
        let m = Matrix::identity(2);
        let v = vec2(3.0, -1.0);
        assert_eq!(m.matvec(&v).unwrap(), vec2(3.0, -1.0));
    }

    #[test]
    fn matvec_zero_annihilates() {
        let m = Matrix::zeros(3, 2);
        let v = vec2(7.5, -2.0);
        assert_eq!(m.matvec(&v).unwrap().as_slice(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn matvec_hand_example() {
        let m = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let v = vec2(1.0, 1.0);
        assert_eq!(m.matvec(&v).unwrap().as_slice(), &[3.0, 7.0]);
    }

    #[test]
    fn matvec_dimension_mismatch() {
        let m = Matrix::zeros(2, 3);
        assert!(m.matvec(&vec2(1.0, 2.0)).is_err());
    }

    #[test]
    fn relu_and_grad() {
        let v = Vector::from_vec(vec![-1.0, 0.0, 2.0]);
        assert_eq!(relu(&v).as_slice(), &[0.0, 0.0, 2.0]);
        assert_eq!(relu_grad(&v).as_slice(), &[0.0, 0.0, 1.0]);
        let pos = Vector::from_vec(vec![0.5, 1.5]);
        assert_eq!(relu(&pos), pos);
    }

    #[test]
    fn finite_diff_quadratic() {
        let f = |x: &Vector| x.dot(x).unwrap();
        let g = finite_diff_grad(f, &vec2(1.0, 2.0), 1e-5).unwrap();
        assert!((g.get(0) - 2.0).abs() < 1e-6);
        assert!((g.get(1) - 4.0).abs() < 1e-6);
    }

    #[test]
    fn finite_diff_constant_is_zero() {
        let g = finite_diff_grad(|_| 42.0, &vec2(0.3, -0.7), 1e-5).unwrap();
        assert_eq!(g.as_slice(), &[0.0, 0.0]);
    }

    #[test]
    fn finite_diff_exp() {
        let f = |x: &Vector| x.get(0).exp();
        let g = finite_diff_grad(f, &Vector::from_vec(vec![0.0]), 1e-5).unwrap();
        assert!((g.get(0) - 1.0).abs() < 1e-8);
    }

    #[test]
    fn finite_diff_of_dot_recovers_weights() {
        let w = Vector::from_vec(vec![0.3, -1.2, 2.5]);
        let wc = w.clone();
        let f = move |x: &Vector| wc.dot(x).unwrap();
        let g = finite_diff_grad(f, &Vector::from_vec(vec![0.1, 0.2, 0.3]), 1e-5).unwrap();
        for i in 0..3 {
            assert!((g.get(i) - w.get(i)).abs() < 1e-6);
        }
    }

    #[test]
    fn finite_diff_rejects_nonpositive_h() {
        assert!(finite_diff_grad(|_| 0.0, &vec2(0.0, 0.0), 0.0).is_err());
    }

    #[test]
    fn rng_is_reproducible() {
        let mut a = Rng::new(12345);
        let mut b = Rng::new(12345);
        for _ in 0..100 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn rng_streams_differ() {
        let mut a = Rng::with_stream(7, "data");
        let mut b = Rng::with_stream(7, "init");
        assert_ne!(a.next_u64(), b.next_u64());
    }

    #[test]
    fn gaussian_moments_are_sane() {
        let mut rng = Rng::new(99);
        let n = 20_000;
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        for _ in 0..n {
            let g = rng.gaussian();
            sum += g;
            sumsq += g * g;
        }
        let mean = sum / n as f64;
        let var = sumsq / n as f64 - mean * mean;
        assert!(mean.abs() < 0.03, "mean {mean}");
        assert!((var - 1.0).abs() < 0.05, "var {var}");
    }

    #[test]
    fn shuffle_is_a_permutation() {
        let mut rng = Rng::new(5);
        let mut v: Vec<usize> = (0..50).collect();
        rng.shuffle(&mut v);
        let mut sorted = v.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..50).collect::<Vec<_>>());
    }
}
