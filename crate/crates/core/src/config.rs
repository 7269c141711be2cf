//! Experiment configuration file.
//!
//! ```json
//! {
//!   "name": "blobs-mlp",
//!   "seed": 7,
//!   "data": {"kind": "blobs", "num_classes": 4, "dim": 16,
//!            "train_per_class": 200, "test_per_class": 100, "spread": 0.6},
//!   "normalize": false,
//!   "model": {"hidden": [{"kind": "dense", "units": 64}]},
//!   "train": {"learning_rate": 0.05, "momentum": 0.9, "batch_size": 32, "epochs": 20},
//!   "prune": {"zeta": 0.5, "iterations": 6, "mode": "egp"},
//!   "entropy_split": "train",
//!   "reduce": {"max_rel_diff": 1e-6}
//! }
//! ```
//!
//! IDX sources use `{"kind": "idx", "train_images": ..., "train_labels": ...,
//! "test_images": ..., "test_labels": ...}` with paths relative to the config
//! file. Unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{load_idx, make_blobs_split, Dataset, Split};
use crate::error::{Error, Result};
use crate::nn::{LayerDef, Network, TrainConfig};
use crate::prune::{BudgetBase, PruneConfig, PruneMode, ZeroEntropyPolicy};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum DataSource {
    Blobs {
        num_classes: usize,
        dim: usize,
        train_per_class: usize,
        test_per_class: usize,
        spread: f64,
    },
    Idx {
        train_images: PathBuf,
        train_labels: PathBuf,
        test_images: PathBuf,
        test_labels: PathBuf,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(default)]
    pub hidden: Vec<LayerDef>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PruneSection {
    pub zeta: f64,
    pub iterations: usize,
    #[serde(default)]
    pub mode: PruneMode,
    #[serde(default)]
    pub budget_base: BudgetBase,
    #[serde(default)]
    pub zero_entropy: ZeroEntropyPolicy,
    /// Defaults to the training schedule with a quarter of its epochs.
    #[serde(default)]
    pub finetune: Option<TrainConfig>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReduceSection {
    #[serde(default = "default_max_rel_diff")]
    pub max_rel_diff: f64,
}

fn default_max_rel_diff() -> f64 {
    1e-6
}

impl Default for ReduceSection {
    fn default() -> Self {
        Self {
            max_rel_diff: default_max_rel_diff(),
        }
    }
}

/// Which split the ON/OFF statistics are gathered on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EntropySplit {
    #[default]
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_name")]
    pub name: String,
    pub seed: u64,
    pub data: DataSource,
    #[serde(default)]
    pub normalize: bool,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub prune: PruneSection,
    #[serde(default)]
    pub entropy_split: EntropySplit,
    #[serde(default)]
    pub reduce: ReduceSection,
}

fn default_name() -> String {
    "experiment".into()
}

/// Training and test split of an experiment, normalized if requested.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentData {
    pub train: Dataset,
    pub test: Dataset,
}

impl ExperimentData {
    pub fn entropy_set(&self, split: EntropySplit) -> &Dataset {
        match split {
            EntropySplit::Train => &self.train,
            EntropySplit::Test => &self.test,
        }
    }
}

impl ExperimentConfig {
    /// Parses and validates. Every failure is reported as [`Error::Config`].
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            serde_json::from_str(text).map_err(|e| Error::Config(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        match &self.data {
            DataSource::Blobs {
                num_classes,
                dim,
                train_per_class,
                test_per_class,
                spread,
            } => {
                if *num_classes < 2 {
                    return fail(format!("data.num_classes must be at least 2, got {num_classes}"));
                }
                if *dim == 0 {
                    return fail("data.dim must be positive".into());
                }
                if *train_per_class == 0 || *test_per_class == 0 {
                    return fail("data.train_per_class and data.test_per_class must be positive".into());
                }
                if !(spread.is_finite() && *spread >= 0.0) {
                    return fail(format!("data.spread must be non-negative, got {spread}"));
                }
            }
            DataSource::Idx { .. } => {}
        }
        for (i, def) in self.model.hidden.iter().enumerate() {
            let zero = match def {
                LayerDef::Dense { units } => *units == 0,
                LayerDef::Conv2d {
                    out_channels,
                    kernel,
                } => *out_channels == 0 || kernel.contains(&0),
                LayerDef::Flatten => false,
            };
            if zero {
                return fail(format!("model.hidden[{i}] has a zero dimension"));
            }
        }
        self.train.validate("train")?;
        if !(self.prune.zeta > 0.0 && self.prune.zeta < 1.0) {
            return fail(format!("prune.zeta must be in (0, 1), got {}", self.prune.zeta));
        }
        if let Some(ft) = &self.prune.finetune {
            ft.validate("prune.finetune")?;
        }
        let r = self.reduce.max_rel_diff;
        if !(r.is_finite() && r >= 0.0) {
            return fail(format!("reduce.max_rel_diff must be non-negative, got {r}"));
        }
        Ok(())
    }

    /// Effective pruning settings; `iterations` may be 0 (dry run).
    pub fn prune_config(&self) -> PruneConfig {
        let finetune = self.prune.finetune.unwrap_or(TrainConfig {
            epochs: (self.train.epochs / 4).max(1),
            ..self.train
        });
        PruneConfig {
            zeta: self.prune.zeta,
            iterations: self.prune.iterations,
            finetune,
            mode: self.prune.mode,
            budget_base: self.prune.budget_base,
            zero_entropy: self.prune.zero_entropy,
        }
    }

    /// Short dataset label for reports.
    pub fn dataset_label(&self) -> String {
        match &self.data {
            DataSource::Blobs {
                num_classes, dim, ..
            } => format!("blobs{dim}d{num_classes}c"),
            DataSource::Idx { train_images, .. } => train_images
                .file_stem()
                .map_or_else(|| "idx".into(), |s| s.to_string_lossy().into_owned()),
        }
    }

    /// Loads both splits. Relative IDX paths are resolved against `base_dir`.
    /// With `normalize`, statistics come from the training split only.
    pub fn load_data(&self, base_dir: &Path) -> Result<ExperimentData> {
        let (mut train, mut test) = match &self.data {
            DataSource::Blobs {
                num_classes,
                dim,
                train_per_class,
                test_per_class,
                spread,
            } => (
                make_blobs_split(self.seed, self.seed, *train_per_class, *num_classes, *dim, *spread, Split::Train)?,
                make_blobs_split(
                    self.seed,
                    self.seed ^ 0x7e57_7e57,
                    *test_per_class,
                    *num_classes,
                    *dim,
                    *spread,
                    Split::Test,
                )?,
            ),
            DataSource::Idx {
                train_images,
                train_labels,
                test_images,
                test_labels,
            } => {
                let p = |q: &PathBuf| base_dir.join(q);
                let train = load_idx(&p(train_images), &p(train_labels), Split::Train)?;
                let mut test = load_idx(&p(test_images), &p(test_labels), Split::Test)?;
                if test.sample_shape() != train.sample_shape() {
                    return Err(Error::Shape(format!(
                        "test images are {:?}, training images are {:?}",
                        test.sample_shape(),
                        train.sample_shape()
                    )));
                }
                if test.num_classes > train.num_classes {
                    return Err(Error::LabelOutOfRange {
                        label: test.num_classes - 1,
                        num_classes: train.num_classes,
                    });
                }
                test.num_classes = train.num_classes;
                (train, test)
            }
        };
        if self.normalize {
            let norm = train.normalization_stats();
            train.normalize(norm)?;
            test.normalize(norm)?;
        }
        Ok(ExperimentData { train, test })
    }

    /// Freshly initialized network for `data`.
    pub fn build_network(&self, data: &ExperimentData, seed: u64) -> Result<Network> {
        Network::build(data.train.sample_shape(), &self.model.hidden, data.train.num_classes, seed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "seed": 3,
        "data": {"kind": "blobs", "num_classes": 3, "dim": 2,
                 "train_per_class": 10, "test_per_class": 5, "spread": 0.1},
        "model": {"hidden": [{"kind": "dense", "units": 4}]},
        "train": {"learning_rate": 0.1, "momentum": 0.9, "batch_size": 8, "epochs": 8},
        "prune": {"zeta": 0.5, "iterations": 2}
    }"#;

    #[test]
    fn minimal_parses_with_defaults() {
        let cfg = ExperimentConfig::from_json(MINIMAL).unwrap();
        assert_eq!(cfg.name, "experiment");
        assert_eq!(cfg.entropy_split, EntropySplit::Train);
        assert_eq!(cfg.reduce.max_rel_diff, 1e-6);
        let p = cfg.prune_config();
        assert_eq!(p.finetune.epochs, 2);
        assert_eq!(p.mode, PruneMode::Egp);
        assert_eq!(p.budget_base, BudgetBase::Remaining);
    }

    #[test]
    fn bad_zeta_names_the_field() {
        let text = MINIMAL.replace("\"zeta\": 0.5", "\"zeta\": 1.5");
        let err = ExperimentConfig::from_json(&text).unwrap_err();
        assert!(err.is_usage());
        assert!(err.to_string().contains("prune.zeta"), "{err}");
    }

    #[test]
    fn unknown_key_is_rejected() {
        let text = MINIMAL.replace("\"seed\": 3", "\"seed\": 3, \"sed\": 4");
        let err = ExperimentConfig::from_json(&text).unwrap_err();
        assert!(err.to_string().contains("sed"), "{err}");
    }

    #[test]
    fn blob_splits_share_centres_but_not_noise() {
        let cfg = ExperimentConfig::from_json(MINIMAL).unwrap();
        let d = cfg.load_data(Path::new(".")).unwrap();
        assert_eq!(d.train.len(), 30);
        assert_eq!(d.test.len(), 15);
        assert_ne!(d.train.images.row(0), d.test.images.row(0));
        let net = cfg.build_network(&d, 1).unwrap();
        assert_eq!(net.input_shape(), &[2]);
        assert_eq!(net.num_outputs(), 3);
    }
}
