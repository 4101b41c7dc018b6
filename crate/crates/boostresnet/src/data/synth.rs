//! Reproducible synthetic datasets: Gaussian blobs (separable at will), XOR
//! and concentric circles (not linearly separable, so depth has to earn its
//! keep), and a two-class image set for the IDX pipeline.

use std::f64::consts::PI;

use crate::data::{Dataset, Split};
use crate::error::{Error, Result};
use crate::numkit::{Matrix, Rng};

/// Gaussian blobs, one unit-variance cluster per class. Cluster centers sit
/// on a circle in the first two feature dimensions with adjacent centers
/// `separation` apart, so separation >= 6 gives linearly separable classes
/// with probability ~1.
pub fn make_blobs(m: usize, n: usize, c: usize, separation: f64, seed: u64) -> Result<Dataset> {
    if m < c {
        return Err(Error::Config(format!("make_blobs: m={m} < classes={c}")));
    }
    if n < 2 {
        return Err(Error::Config("make_blobs: n must be >= 2".into()));
    }
    let mut rng = Rng::with_stream(seed, "blobs");
    let radius = if c == 1 {
        0.0
    } else {
        separation / (2.0 * (PI / c as f64).sin())
    };
    let centers: Vec<(f64, f64)> = (0..c)
        .map(|l| {
            let angle = 2.0 * PI * l as f64 / c as f64;
            (radius * angle.cos(), radius * angle.sin())
        })
        .collect();

    let mut x = Matrix::zeros(m, n);
    let mut y = Vec::with_capacity(m);
    for i in 0..m {
        let label = i % c; // balanced by construction
        let row = x.row_mut(i);
        for v in row.iter_mut() {
            *v = rng.gaussian();
        }
        row[0] += centers[label].0;
        row[1] += centers[label].1;
        y.push(label);
    }
    Dataset::new(x, y, c, Split::Train)
}

/// XOR: four clusters at (+-1, +-1), label = XOR of the corner signs.
/// Corners cycle i mod 4 so the classes are exactly balanced; with noise 0
/// the points sit on the corners and the best halfspace gets 75%.
pub fn make_xor(m: usize, noise: f64, seed: u64) -> Result<Dataset> {
    if m == 0 {
        return Err(Error::Config("make_xor: m must be >= 1".into()));
    }
    let mut rng = Rng::with_stream(seed, "xor");
    let corners = [(1.0, 1.0), (-1.0, -1.0), (1.0, -1.0), (-1.0, 1.0)];
    let mut x = Matrix::zeros(m, 2);
    let mut y = Vec::with_capacity(m);
    for i in 0..m {
        let (cx, cy) = corners[i % 4];
        let row = x.row_mut(i);
        row[0] = cx + noise * rng.gaussian();
        row[1] = cy + noise * rng.gaussian();
        // label 1 when the corner signs disagree
        y.push(if cx * cy < 0.0 { 1 } else { 0 });
    }
    Dataset::new(x, y, 2, Split::Train)
}

/// Two concentric circles: class 0 at radius 0.5, class 1 at radius 1.0.
pub fn make_circles(m: usize, noise: f64, seed: u64) -> Result<Dataset> {
    if m == 0 {
        return Err(Error::Config("make_circles: m must be >= 1".into()));
    }
    let mut rng = Rng::with_stream(seed, "circles");
    let mut x = Matrix::zeros(m, 2);
    let mut y = Vec::with_capacity(m);
    for i in 0..m {
        let label = i % 2;
        let r = if label == 0 { 0.5 } else { 1.0 };
        let angle = rng.uniform(0.0, 2.0 * PI);
        let row = x.row_mut(i);
        row[0] = r * angle.cos() + noise * rng.gaussian();
        row[1] = r * angle.sin() + noise * rng.gaussian();
        y.push(label);
    }
    Dataset::new(x, y, 2, Split::Train)
}

/// Synthetic 28x28 grayscale digit-like images, two classes: class 0 is a
/// ring (an "0"-like ellipse outline), class 1 a vertical bar. Position,
/// size, stroke width, intensity, and pixel noise are randomized per image.
/// Returned as raw u8 images plus labels so they can be written in IDX form
/// and pushed through the real loading pipeline.
pub fn make_digits(m: usize, seed: u64) -> (Vec<Vec<u8>>, Vec<u8>) {
    let side = 28usize;
    let mut rng = Rng::with_stream(seed, "digits");
    let mut images = Vec::with_capacity(m);
    let mut labels = Vec::with_capacity(m);
    for i in 0..m {
        let label = (i % 2) as u8;
        let mut img = vec![0.0f64; side * side];
        let cx = 14.0 + rng.uniform(-5.0, 5.0);
        let cy = 14.0 + rng.uniform(-5.0, 5.0);
        let ink = rng.uniform(90.0, 255.0);
        if label == 0 {
            // ring: |dist(p, center) - radius| < thickness
            let rx = rng.uniform(4.0, 9.0);
            let ry = rng.uniform(5.0, 10.0);
            let thick = rng.uniform(0.9, 2.4);
            for py in 0..side {
                for px in 0..side {
                    let dx = (px as f64 - cx) / rx;
                    let dy = (py as f64 - cy) / ry;
                    let d = (dx * dx + dy * dy).sqrt();
                    if (d - 1.0).abs() * rx.min(ry) < thick {
                        img[py * side + px] = ink;
                    }
                }
            }
        } else {
            // bar with a random slant, sometimes steep
            let half_w = rng.uniform(0.8, 2.4);
            let half_h = rng.uniform(5.0, 10.0);
            let slant = rng.uniform(-0.45, 0.45);
            for py in 0..side {
                let fy = py as f64 - cy;
                if fy.abs() > half_h {
                    continue;
                }
                let center_x = cx + slant * fy;
                for px in 0..side {
                    if (px as f64 - center_x).abs() <= half_w {
                        img[py * side + px] = ink;
                    }
                }
            }
        }
        // heavy pixel noise: dense gaussian plus salt-and-pepper speckle
        let bytes: Vec<u8> = img
            .iter()
            .map(|&v| {
                let mut out = v + 28.0 * rng.gaussian();
                if rng.next_f64() < 0.08 {
                    out = rng.next_f64() * 255.0;
                }
                out.clamp(0.0, 255.0) as u8
            })
            .collect();
        images.push(bytes);
        labels.push(label);
    }
    (images, labels)
}
