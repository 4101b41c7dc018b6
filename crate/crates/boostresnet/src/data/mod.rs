//! Dataset ingestion, synthetic generators, and preprocessing.

mod idx;
mod synth;

pub use idx::{load_idx, write_idx_images, write_idx_labels};
pub use synth::{make_blobs, make_circles, make_digits, make_xor};

use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkit::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// Per-feature standardization applied to a dataset, recorded so the same
/// transform can be replayed at evaluation time.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Normalization {
    pub shift: Vec<f64>,
    pub scale: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub x: Matrix,
    pub y: Vec<usize>,
    pub n_classes: usize,
    pub split: Split,
    pub normalization: Option<Normalization>,
}

impl Dataset {
    pub fn new(x: Matrix, y: Vec<usize>, n_classes: usize, split: Split) -> Result<Self> {
        if x.rows() != y.len() {
            return Err(Error::Dimension(format!(
                "{} feature rows but {} labels",
                x.rows(),
                y.len()
            )));
        }
        if x.rows() == 0 {
            return Err(Error::State("empty dataset".into()));
        }
        if let Some(&bad) = y.iter().find(|&&l| l >= n_classes) {
            return Err(Error::State(format!(
                "label {bad} out of range for {n_classes} classes"
            )));
        }
        x.check_finite("dataset features")?;
        Ok(Dataset {
            x,
            y,
            n_classes,
            split,
            normalization: None,
        })
    }

    #[inline]
    pub fn m(&self) -> usize {
        self.x.rows()
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.x.cols()
    }

    /// Signed labels for the binary task: class 1 maps to +1, class 0 to -1.
    pub fn signed_labels(&self) -> Result<Vec<f64>> {
        if self.n_classes != 2 {
            return Err(Error::State(format!(
                "binary labels requested on a {}-class dataset",
                self.n_classes
            )));
        }
        Ok(self
            .y
            .iter()
            .map(|&l| if l == 1 { 1.0 } else { -1.0 })
            .collect())
    }

    /// Keep only the listed classes (relabelled 0..keep.len()), at most
    /// `cap_per_class` examples of each, preserving input order.
    pub fn subset_by_class(&self, keep: &[usize], cap_per_class: usize) -> Result<Dataset> {
        let mut counts = vec![0usize; keep.len()];
        let mut rows: Vec<usize> = Vec::new();
        let mut labels: Vec<usize> = Vec::new();
        for (i, &l) in self.y.iter().enumerate() {
            if let Some(pos) = keep.iter().position(|&c| c == l) {
                if counts[pos] < cap_per_class {
                    counts[pos] += 1;
                    rows.push(i);
                    labels.push(pos);
                }
            }
        }
        if rows.is_empty() {
            return Err(Error::State("class subset selected no examples".into()));
        }
        let mut x = Matrix::zeros(rows.len(), self.n());
        for (r, &i) in rows.iter().enumerate() {
            x.row_mut(r).copy_from_slice(self.x.row(i));
        }
        Dataset::new(x, labels, keep.len(), self.split)
    }

    /// Max over examples of the l-infinity norm of the feature vector.
    pub fn r_inf(&self) -> f64 {
        self.x
            .data()
            .iter()
            .map(|v| v.abs())
            .fold(0.0, f64::max)
    }
}

/// Fit per-feature standardization on `train` and apply it to `train` and
/// every dataset in `others`. Zero-variance features keep scale 1.
pub fn normalize(train: &mut Dataset, others: &mut [&mut Dataset]) {
    let m = train.m() as f64;
    let n = train.n();
    let mut mean = vec![0.0; n];
    for i in 0..train.m() {
        for (s, v) in mean.iter_mut().zip(train.x.row(i)) {
            *s += v;
        }
    }
    for s in &mut mean {
        *s /= m;
    }
    let mut var = vec![0.0; n];
    for i in 0..train.m() {
        for (j, v) in train.x.row(i).iter().enumerate() {
            let d = v - mean[j];
            var[j] += d * d;
        }
    }
    let scale: Vec<f64> = var
        .iter()
        .map(|&v| {
            let sd = (v / m).sqrt();
            if sd > 0.0 {
                sd
            } else {
                1.0
            }
        })
        .collect();

    let norm = Normalization {
        shift: mean,
        scale,
    };
    apply_normalization(train, &norm);
    for ds in others {
        apply_normalization(ds, &norm);
    }
}

pub fn apply_normalization(ds: &mut Dataset, norm: &Normalization) {
    for i in 0..ds.m() {
        for (j, v) in ds.x.row_mut(i).iter_mut().enumerate() {
            *v = (*v - norm.shift[j]) / norm.scale[j];
        }
    }
    ds.normalization = Some(norm.clone());
}

/// CSV dataset with header row `label,f0,f1,...`.
pub fn load_csv(path: &Path, split: Split) -> Result<Dataset> {
    let file = File::open(path)?;
    let reader = BufReader::new(file);
    let mut lines = reader.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Format {
            offset: 0,
            message: "empty csv".into(),
        })??;
    if !header.starts_with("label") {
        return Err(Error::Format {
            offset: 0,
            message: format!("csv header must start with 'label', got '{header}'"),
        });
    }
    let n = header.split(',').count() - 1;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut labels: Vec<usize> = Vec::new();
    for (lineno, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split(',');
        let label: usize = fields
            .next()
            .unwrap()
            .trim()
            .parse()
            .map_err(|_| Error::Format {
                offset: (lineno + 2) as u64,
                message: format!("bad label on data line {}", lineno + 1),
            })?;
        let feats: Vec<f64> = fields
            .map(|f| f.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::Format {
                offset: (lineno + 2) as u64,
                message: format!("bad feature value on data line {}", lineno + 1),
            })?;
        if feats.len() != n {
            return Err(Error::Format {
                offset: (lineno + 2) as u64,
                message: format!("expected {n} features, got {}", feats.len()),
            });
        }
        labels.push(label);
        rows.push(feats);
    }
    let n_classes = labels.iter().copied().max().unwrap_or(0) + 1;
    Dataset::new(Matrix::from_rows(&rows)?, labels, n_classes, split)
}
