//! Sequential residual-network training as telescoping-sum boosting.
//!
//! A depth-T MLP-ResNet is trained block by block: each round fits one
//! residual block plus an auxiliary linear classifier against an
//! exponential-loss subproblem, and the weighted differences of consecutive
//! auxiliary classifiers telescope to the final network output. The library
//! also provides an end-to-end backprop baseline over the same architecture
//! and computable training-error / margin / l1-path-norm diagnostics.

pub mod bounds;
pub mod boost;
pub mod data;
pub mod error;
pub mod numkit;
pub mod oracle;
pub mod resnet;

pub use error::{Error, Result};
