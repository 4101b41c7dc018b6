//! Versioned JSON model format.
//!
//! Floats pass through serde_json's shortest-round-trip formatting, so a
//! write/read cycle reproduces every weight bit-exactly.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkit::{Matrix, Vector};
use crate::resnet::{FinalClassifier, ResidualBlock, Task, TrainedResNet};

const MODEL_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct BlockDto {
    w_in: Vec<Vec<f64>>,
    w_out: Vec<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum ClassifierDto {
    Binary(Vec<f64>),
    Multiclass(Vec<Vec<f64>>),
}

#[derive(Serialize, Deserialize)]
struct ModelDto {
    version: u32,
    task: String,
    classes: usize,
    n: usize,
    k: usize,
    t: usize,
    blocks: Vec<BlockDto>,
    final_classifier: ClassifierDto,
    alpha_final: f64,
}

fn matrix_to_rows(m: &Matrix) -> Vec<Vec<f64>> {
    (0..m.rows()).map(|i| m.row(i).to_vec()).collect()
}

fn rows_to_matrix(rows: &[Vec<f64>]) -> Result<Matrix> {
    Matrix::from_rows(rows)
}

pub fn write_model<W: Write>(net: &TrainedResNet, mut out: W) -> Result<()> {
    let dto = ModelDto {
        version: MODEL_VERSION,
        task: match net.task {
            Task::Binary => "binary".to_string(),
            Task::Multiclass(_) => "multiclass".to_string(),
        },
        classes: net.task.classes(),
        n: net.n,
        k: net.k,
        t: net.blocks.len(),
        blocks: net
            .blocks
            .iter()
            .map(|b| BlockDto {
                w_in: matrix_to_rows(b.w_in()),
                w_out: matrix_to_rows(b.w_out()),
            })
            .collect(),
        final_classifier: match &net.final_classifier {
            FinalClassifier::Binary(w) => ClassifierDto::Binary(w.as_slice().to_vec()),
            FinalClassifier::Multiclass(w) => ClassifierDto::Multiclass(matrix_to_rows(w)),
        },
        alpha_final: net.alpha_final,
    };
    let text = serde_json::to_string_pretty(&dto)?;
    out.write_all(text.as_bytes())?;
    out.write_all(b"\n")?;
    Ok(())
}

pub fn read_model<R: Read>(mut input: R) -> Result<TrainedResNet> {
    let mut text = String::new();
    input.read_to_string(&mut text)?;
    let dto: ModelDto = serde_json::from_str(&text)?;
    if dto.version != MODEL_VERSION {
        return Err(Error::Format {
            offset: 0,
            message: format!("unsupported model version {}", dto.version),
        });
    }
    let task = match dto.task.as_str() {
        "binary" => Task::Binary,
        "multiclass" => Task::Multiclass(dto.classes),
        other => {
            return Err(Error::Format {
                offset: 0,
                message: format!("unknown task '{other}'"),
            })
        }
    };
    let blocks = dto
        .blocks
        .iter()
        .map(|b| ResidualBlock::new(rows_to_matrix(&b.w_in)?, rows_to_matrix(&b.w_out)?))
        .collect::<Result<Vec<_>>>()?;
    let final_classifier = match (&dto.final_classifier, task) {
        (ClassifierDto::Binary(w), Task::Binary) => {
            FinalClassifier::Binary(Vector::from_vec(w.clone()))
        }
        (ClassifierDto::Multiclass(w), Task::Multiclass(_)) => {
            FinalClassifier::Multiclass(rows_to_matrix(w)?)
        }
        _ => {
            return Err(Error::Format {
                offset: 0,
                message: "final_classifier shape does not match task".into(),
            })
        }
    };
    if final_classifier.n() != dto.n {
        return Err(Error::Format {
            offset: 0,
            message: format!(
                "final_classifier has {} channels, header says n={}",
                final_classifier.n(),
                dto.n
            ),
        });
    }
    for (t, b) in blocks.iter().enumerate() {
        if b.n() != dto.n {
            return Err(Error::Format {
                offset: 0,
                message: format!("block {t} has {} channels, header says n={}", b.n(), dto.n),
            });
        }
    }
    Ok(TrainedResNet {
        task,
        n: dto.n,
        k: dto.k,
        blocks,
        final_classifier,
        alpha_final: dto.alpha_final,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkit::Rng;
    use crate::resnet::propagate;

    #[test]
    fn round_trip_is_bit_exact() {
        let mut rng = Rng::new(2024);
        let n = 3;
        let k = 2;
        let blocks: Vec<ResidualBlock> = (0..2)
            .map(|_| {
                let mut w_in = Matrix::zeros(n, k);
                let mut w_out = Matrix::zeros(k, n);
                rng.fill_gaussian(w_in.data_mut(), 0.9);
                rng.fill_gaussian(w_out.data_mut(), 0.9);
                ResidualBlock::new(w_in, w_out).unwrap()
            })
            .collect();
        let mut w = vec![0.0; n];
        rng.fill_gaussian(&mut w, 1.0);
        let net = TrainedResNet {
            task: Task::Binary,
            n,
            k,
            blocks,
            final_classifier: FinalClassifier::Binary(Vector::from_vec(w)),
            alpha_final: 0.123456789012345678,
        };

        let mut buf = Vec::new();
        write_model(&net, &mut buf).unwrap();
        let loaded = read_model(buf.as_slice()).unwrap();

        assert_eq!(loaded.alpha_final, net.alpha_final);
        assert_eq!(loaded.blocks, net.blocks);
        assert_eq!(loaded.final_classifier, net.final_classifier);

        // Scores bit-identical on a random batch.
        let mut x = Matrix::zeros(100, n);
        rng.fill_gaussian(x.data_mut(), 1.0);
        let a = propagate(&net.blocks, &x).unwrap();
        let b = propagate(&loaded.blocks, &x).unwrap();
        assert_eq!(
            a.last().unwrap().features,
            b.last().unwrap().features
        );
        for i in 0..x.rows() {
            assert_eq!(
                net.score(x.row(i)).unwrap(),
                loaded.score(x.row(i)).unwrap()
            );
        }
    }

    #[test]
    fn rejects_unknown_version() {
        let text = r#"{"version": 99, "task": "binary", "classes": 2, "n": 1, "k": 1,
                       "t": 0, "blocks": [], "final_classifier": [1.0], "alpha_final": 1.0}"#;
        assert!(read_model(text.as_bytes()).is_err());
    }

    #[test]
    fn rejects_mismatched_classifier() {
        let text = r#"{"version": 1, "task": "binary", "classes": 2, "n": 2, "k": 1,
                       "t": 0, "blocks": [], "final_classifier": [[1.0, 0.0]], "alpha_final": 1.0}"#;
        assert!(read_model(text.as_bytes()).is_err());
    }
}
