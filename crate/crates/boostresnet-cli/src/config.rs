//! Experiment configuration: JSON schema, defaults, validation, and dataset
//! resolution. The resolved config (defaults filled in) is written next to
//! every run's outputs so results regenerate from one file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use boostresnet::boost::{AlphaMode, BoostConfig};
use boostresnet::data::{
    load_csv, load_idx, make_blobs, make_circles, make_digits, make_xor, normalize, Dataset,
    Split,
};
use boostresnet::error::{Error, Result};
use boostresnet::numkit::Rng;
use boostresnet::oracle::{EarlyStop, OracleConfig};
use boostresnet::resnet::Task;

fn default_thetas() -> Vec<f64> {
    vec![0.0, 0.1, 0.5]
}

fn default_delta() -> f64 {
    0.1
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum DatasetSpec {
    Blobs {
        train_m: usize,
        #[serde(default)]
        test_m: usize,
        n: usize,
        classes: usize,
        separation: f64,
    },
    Xor {
        train_m: usize,
        #[serde(default)]
        test_m: usize,
        noise: f64,
    },
    Circles {
        train_m: usize,
        #[serde(default)]
        test_m: usize,
        noise: f64,
    },
    /// Synthetic two-class 28x28 images (ring vs bar), materialized as IDX
    /// files under the output directory and loaded back through the IDX
    /// pipeline.
    Digits {
        train_m: usize,
        #[serde(default)]
        test_m: usize,
    },
    Idx {
        train_images: PathBuf,
        train_labels: PathBuf,
        #[serde(default)]
        test_images: Option<PathBuf>,
        #[serde(default)]
        test_labels: Option<PathBuf>,
        /// Optional class filter, e.g. [0, 1] for a binary digit task;
        /// classes are relabelled 0..len.
        #[serde(default)]
        keep_classes: Option<Vec<usize>>,
        #[serde(default)]
        cap_per_class: Option<usize>,
    },
    Csv {
        train_path: PathBuf,
        #[serde(default)]
        test_path: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ArchConfig {
    /// Input channels; inferred from the dataset when omitted.
    #[serde(default)]
    pub n: Option<usize>,
    pub k: usize,
    /// Depth cap; signed so a negative value is reported as a validation
    /// error rather than a parse failure.
    pub t_max: i64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoostParams {
    pub gamma_threshold: f64,
    pub patience: usize,
    pub alpha_mode: AlphaMode,
}

impl Default for BoostParams {
    fn default() -> Self {
        BoostParams {
            gamma_threshold: 0.001,
            patience: 3,
            alpha_mode: AlphaMode::LineSearch,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OracleParams {
    pub learning_rate: f64,
    #[serde(default)]
    pub lr_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    #[serde(default = "OracleParams::default_init_scale")]
    pub init_scale: f64,
    #[serde(default = "OracleParams::default_max_grad_norm")]
    pub max_grad_norm: f64,
    #[serde(default)]
    pub early_stop: Option<EarlyStop>,
}

impl OracleParams {
    fn default_init_scale() -> f64 {
        1.0
    }
    fn default_max_grad_norm() -> f64 {
        10.0
    }
}

impl Default for OracleParams {
    fn default() -> Self {
        OracleParams {
            learning_rate: 0.05,
            lr_decay: 0.0,
            epochs: 30,
            batch_size: 32,
            init_scale: 1.0,
            max_grad_norm: 10.0,
            early_stop: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub task: String,
    pub seed: u64,
    pub dataset: DatasetSpec,
    #[serde(default = "default_true")]
    pub normalize: bool,
    pub arch: ArchConfig,
    #[serde(default)]
    pub boost: BoostParams,
    #[serde(default)]
    pub oracle: OracleParams,
    pub out_dir: PathBuf,
    /// Write measured per-round wallclock into rounds.csv instead of zeros
    /// (zeros keep reruns byte-identical).
    #[serde(default)]
    pub measured_wallclock: bool,
    #[serde(default = "default_thetas")]
    pub thetas: Vec<f64>,
    #[serde(default = "default_delta")]
    pub delta: f64,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let cfg: ExperimentConfig = serde_json::from_str(&text)?;
        Ok(cfg)
    }

    pub fn task(&self) -> Result<Task> {
        match self.task.as_str() {
            "binary" => Ok(Task::Binary),
            "multiclass" => Ok(Task::Multiclass(0)), // classes resolved from data
            other => Err(Error::Config(format!(
                "task must be 'binary' or 'multiclass', got '{other}'"
            ))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.task()?;
        if self.arch.t_max < 0 {
            return Err(Error::Config(format!(
                "arch.t_max must be >= 0, got {}",
                self.arch.t_max
            )));
        }
        if self.arch.k == 0 && self.arch.t_max > 0 {
            return Err(Error::Config("arch.k must be >= 1 when t_max > 0".into()));
        }
        if !(0.0..1.0).contains(&self.delta) || self.delta == 0.0 {
            return Err(Error::Config(format!(
                "delta must lie in (0, 1), got {}",
                self.delta
            )));
        }
        self.boost_config().validate()?;
        self.oracle_config().validate()?;
        match &self.dataset {
            DatasetSpec::Blobs { train_m, classes, n, .. } => {
                if *train_m < *classes {
                    return Err(Error::Config(format!(
                        "dataset.train_m = {train_m} is smaller than dataset.classes = {classes}"
                    )));
                }
                if *n < 2 {
                    return Err(Error::Config("dataset.n must be >= 2 for blobs".into()));
                }
            }
            DatasetSpec::Xor { train_m, .. }
            | DatasetSpec::Circles { train_m, .. }
            | DatasetSpec::Digits { train_m, .. } => {
                if *train_m == 0 {
                    return Err(Error::Config("dataset.train_m must be >= 1".into()));
                }
            }
            _ => {}
        }
        Ok(())
    }

    pub fn boost_config(&self) -> BoostConfig {
        BoostConfig {
            t_max: self.arch.t_max.max(0) as usize,
            gamma_threshold: self.boost.gamma_threshold,
            patience: self.boost.patience,
            alpha_mode: self.boost.alpha_mode,
            k: self.arch.k,
        }
    }

    /// Oracle config with its seed derived from the master seed through the
    /// "oracle" sub-stream.
    pub fn oracle_config(&self) -> OracleConfig {
        OracleConfig {
            learning_rate: self.oracle.learning_rate,
            lr_decay: self.oracle.lr_decay,
            epochs: self.oracle.epochs,
            batch_size: self.oracle.batch_size,
            init_scale: self.oracle.init_scale,
            seed: Rng::derive_seed(self.seed, "oracle"),
            max_grad_norm: self.oracle.max_grad_norm,
            early_stop: self.oracle.early_stop,
        }
    }

    /// Materialize train and (optional) test sets. All generator randomness
    /// flows from the master seed through the "data" sub-stream.
    pub fn load_datasets(&self) -> Result<(Dataset, Option<Dataset>)> {
        let data_seed = Rng::derive_seed(self.seed, "data");
        let test_seed = Rng::derive_seed(self.seed, "data-test");
        let (mut train, mut test) = match &self.dataset {
            DatasetSpec::Blobs {
                train_m,
                test_m,
                n,
                classes,
                separation,
            } => {
                let train = make_blobs(*train_m, *n, *classes, *separation, data_seed)?;
                let test = if *test_m > 0 {
                    Some(with_split(
                        make_blobs(*test_m, *n, *classes, *separation, test_seed)?,
                        Split::Test,
                    ))
                } else {
                    None
                };
                (train, test)
            }
            DatasetSpec::Xor { train_m, test_m, noise } => {
                let train = make_xor(*train_m, *noise, data_seed)?;
                let test = if *test_m > 0 {
                    Some(with_split(make_xor(*test_m, *noise, test_seed)?, Split::Test))
                } else {
                    None
                };
                (train, test)
            }
            DatasetSpec::Circles { train_m, test_m, noise } => {
                let train = make_circles(*train_m, *noise, data_seed)?;
                let test = if *test_m > 0 {
                    Some(with_split(
                        make_circles(*test_m, *noise, test_seed)?,
                        Split::Test,
                    ))
                } else {
                    None
                };
                (train, test)
            }
            DatasetSpec::Digits { train_m, test_m } => {
                let train = digits_dataset(*train_m, data_seed, &self.out_dir, "train")?;
                let test = if *test_m > 0 {
                    Some(with_split(
                        digits_dataset(*test_m, test_seed, &self.out_dir, "test")?,
                        Split::Test,
                    ))
                } else {
                    None
                };
                (train, test)
            }
            DatasetSpec::Idx {
                train_images,
                train_labels,
                test_images,
                test_labels,
                keep_classes,
                cap_per_class,
            } => {
                let mut train = load_idx(train_images, train_labels)?;
                let mut test = match (test_images, test_labels) {
                    (Some(i), Some(l)) => Some(with_split(load_idx(i, l)?, Split::Test)),
                    (None, None) => None,
                    _ => {
                        return Err(Error::Config(
                            "dataset.test_images and dataset.test_labels must be given together"
                                .into(),
                        ))
                    }
                };
                if let Some(keep) = keep_classes {
                    let cap = cap_per_class.unwrap_or(usize::MAX);
                    train = train.subset_by_class(keep, cap)?;
                    if let Some(ts) = test.take() {
                        test = Some(with_split(ts.subset_by_class(keep, cap)?, Split::Test));
                    }
                }
                (train, test)
            }
            DatasetSpec::Csv { train_path, test_path } => {
                let train = load_csv(train_path, Split::Train)?;
                let test = match test_path {
                    Some(p) => Some(load_csv(p, Split::Test)?),
                    None => None,
                };
                (train, test)
            }
        };

        if let Some(n) = self.arch.n {
            if n != train.n() {
                return Err(Error::Config(format!(
                    "arch.n = {n} does not match the dataset's {} features",
                    train.n()
                )));
            }
        }
        if self.task.as_str() == "binary" && train.n_classes != 2 {
            return Err(Error::Config(format!(
                "task is binary but the dataset has {} classes",
                train.n_classes
            )));
        }

        if self.normalize {
            match &mut test {
                Some(ts) => normalize(&mut train, &mut [ts]),
                None => normalize(&mut train, &mut []),
            }
        }
        Ok((train, test))
    }
}

fn with_split(mut ds: Dataset, split: Split) -> Dataset {
    ds.split = split;
    ds
}

/// Generate the synthetic digit images, write them as IDX files under
/// `out_dir/data`, and load them back through the real IDX pipeline.
fn digits_dataset(m: usize, seed: u64, out_dir: &Path, tag: &str) -> Result<Dataset> {
    let (images, labels) = make_digits(m, seed);
    let dir = out_dir.join("data");
    std::fs::create_dir_all(&dir)?;
    let img_path = dir.join(format!("digits-{tag}-images.idx"));
    let lab_path = dir.join(format!("digits-{tag}-labels.idx"));
    boostresnet::data::write_idx_images(&img_path, &images, 28, 28)?;
    boostresnet::data::write_idx_labels(&lab_path, &labels)?;
    load_idx(&img_path, &lab_path)
}
