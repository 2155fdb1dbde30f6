//! Sectioned TOML run configuration.
//!
//! ```toml
//! [model]
//! embedding_size = 8
//! variant = "full"
//!
//! [feature_generation]
//! kernel_heights = [3, 3]
//! feature_maps = [3, 3]
//! new_maps = [3, 3]
//! pool_height = 2
//!
//! [classifier]
//! kind = "ipnn"
//! hidden_sizes = [64, 32]
//!
//! [train]
//! batch_size = 256
//! learning_rate = 1e-3
//! epochs = 10
//!
//! [data.synthetic]
//! n_train = 20000
//! n_test = 5000
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::TrainConfig;
use crate::classifier::ClassifierConfig;
use crate::data::io::read_table;
use crate::data::{build_vocab, generate_synthetic, DatasetSchema, Instance, SyntheticSpec};
use crate::error::{FgcnnError, Result};
use crate::experiments::ExperimentConfig;
use crate::featgen::FeatureGenConfig;
use crate::model::{ModelConfig, Variant};
use crate::train::metrics::auc;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub embedding_size: usize,
    pub variant: Variant,
}

impl Default for ModelSection {
    fn default() -> Self {
        let d = ModelConfig::desk_default();
        ModelSection {
            embedding_size: d.embedding_size,
            variant: d.variant,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticConfig {
    pub n_fields: usize,
    pub cardinality: usize,
    pub interacting_pair: (usize, usize),
    pub weight_scale: f64,
    pub bias: f64,
    /// Fixes the planted logit table; the run seed only drives sampling.
    pub weight_seed: u64,
    pub n_train: usize,
    pub n_test: usize,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            n_fields: 8,
            cardinality: 10,
            interacting_pair: (1, 5),
            weight_scale: 3.0,
            bias: 0.0,
            weight_seed: 7,
            n_train: 20_000,
            n_test: 5_000,
        }
    }
}

impl SyntheticConfig {
    pub fn spec(&self, seed: u64) -> Result<SyntheticSpec> {
        SyntheticSpec::planted(
            self.n_fields,
            self.cardinality,
            self.interacting_pair,
            self.weight_scale,
            self.bias,
            self.weight_seed,
            seed,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// Delimited files; when both are set the synthetic section is ignored.
    pub train_file: Option<PathBuf>,
    pub test_file: Option<PathBuf>,
    pub min_count: usize,
    /// Values kept per multivalent field.
    pub max_values: usize,
    pub synthetic: SyntheticConfig,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            train_file: None,
            test_file: None,
            min_count: 1,
            max_values: 8,
            synthetic: SyntheticConfig::default(),
        }
    }
}

/// Encoded train/test split. `bayes_auc` is known only for synthetic data.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub schema: DatasetSchema,
    pub train: Vec<Instance>,
    pub test: Vec<Instance>,
    pub bayes_auc: Option<f64>,
}

impl DataConfig {
    /// Synthetic data is drawn with `seed`; files are read as given.
    pub fn load(&self, seed: u64) -> Result<Dataset> {
        match (&self.train_file, &self.test_file) {
            (Some(tr), Some(te)) => {
                let train_table = read_table(tr)?;
                let schema = build_vocab(&train_table, self.min_count)?;
                let (train, _) = schema.encode_table(&train_table, self.max_values)?;
                let (test, _) = schema.encode_table(&read_table(te)?, self.max_values)?;
                Ok(Dataset {
                    schema,
                    train,
                    test,
                    bayes_auc: None,
                })
            }
            (None, None) => {
                let s = &self.synthetic;
                let data = generate_synthetic(&s.spec(seed)?, s.n_train + s.n_test)?;
                let labels: Vec<u8> = data.instances[s.n_train..].iter().map(|i| i.label).collect();
                let bayes_auc = auc(&data.probs[s.n_train..], &labels);
                let mut train = data.instances;
                let test = train.split_off(s.n_train);
                Ok(Dataset {
                    schema: data.schema,
                    train,
                    test,
                    bayes_auc,
                })
            }
            _ => Err(FgcnnError::Config("set both data.train_file and data.test_file, or neither".into())),
        }
    }
}

fn default_featgen() -> FeatureGenConfig {
    ModelConfig::desk_default().feature_generation
}

fn default_classifier() -> ClassifierConfig {
    ModelConfig::desk_default().classifier
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default = "default_featgen")]
    pub feature_generation: FeatureGenConfig,
    #[serde(default = "default_classifier")]
    pub classifier: ClassifierConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub experiment: ExperimentConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: ModelSection::default(),
            feature_generation: default_featgen(),
            classifier: default_classifier(),
            train: TrainConfig::default(),
            data: DataConfig::default(),
            experiment: ExperimentConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| FgcnnError::Toml(e.to_string()))
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::from_toml(&fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| FgcnnError::Toml(e.to_string()))
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            embedding_size: self.model.embedding_size,
            variant: self.model.variant,
            feature_generation: self.feature_generation.clone(),
            classifier: self.classifier.clone(),
        }
    }

    pub fn with_model(&self, model: &ModelConfig) -> Self {
        RunConfig {
            model: ModelSection {
                embedding_size: model.embedding_size,
                variant: model.variant,
            },
            feature_generation: model.feature_generation.clone(),
            classifier: model.classifier.clone(),
            ..self.clone()
        }
    }

    /// Hex SHA-256 of the canonical serialization.
    pub fn digest(&self) -> Result<String> {
        Ok(hex::encode(Sha256::digest(self.to_toml()?.as_bytes())))
    }
}
