//! Experiment configuration shared by the command-line runner.
//!
//! ```toml
//! algorithms = ["alg1", "alg2", "deepmad"]
//!
//! [dataset]
//! source = "synthetic"          # or "idx" (images + labels) or "csv" (path)
//! [dataset.synthetic]
//! categories = 6
//!
//! [experiment]
//! m = 5                         # or normal_ids = [0, 1]
//! sweep = true
//! combination_limit = 20
//!
//! [eval]
//! seeds = 10
//! base_seed = 0
//!
//! [output]
//! directory = "results"
//! formats = "both"
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{gen_gaussian_classes, load_csv, load_idx, Dataset, SyntheticSpec};
use crate::detectors::Hyperparams;
use crate::eval::{BenchmarkPlan, Combinations};
use crate::multiclass::Algorithm;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataSource {
    Idx,
    Csv,
    Synthetic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub source: DataSource,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub images: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SyntheticSpec>,
}

impl DatasetConfig {
    pub fn synthetic(spec: SyntheticSpec) -> Self {
        Self {
            source: DataSource::Synthetic,
            images: None,
            labels: None,
            path: None,
            synthetic: Some(spec),
        }
    }

    pub fn load(&self) -> Result<Dataset> {
        match self.source {
            DataSource::Idx => match (&self.images, &self.labels) {
                (Some(images), Some(labels)) => load_idx(images, labels),
                _ => Err(Error::Config("idx source needs `images` and `labels`".into())),
            },
            DataSource::Csv => match &self.path {
                Some(path) => load_csv(path),
                None => Err(Error::Config("csv source needs `path`".into())),
            },
            DataSource::Synthetic => gen_gaussian_classes(&self.synthetic.clone().unwrap_or_default()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub normal_ids: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m: Option<usize>,
    /// Visit every `m`-combination (up to `combination_limit`) instead of a single random one.
    #[serde(default)]
    pub sweep: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub combination_limit: Option<usize>,
    #[serde(default = "default_train_fraction")]
    pub train_fraction: f64,
    #[serde(default = "default_subsample")]
    pub train_subsample: f64,
}

fn default_train_fraction() -> f64 {
    0.8
}

fn default_subsample() -> f64 {
    1.0
}

impl Default for ExperimentSection {
    fn default() -> Self {
        Self {
            normal_ids: None,
            m: None,
            sweep: false,
            combination_limit: None,
            train_fraction: default_train_fraction(),
            train_subsample: default_subsample(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub seeds: usize,
    pub base_seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { seeds: 10, base_seed: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Formats {
    Csv,
    Json,
    Both,
}

impl Formats {
    pub fn csv(self) -> bool {
        matches!(self, Formats::Csv | Formats::Both)
    }

    pub fn json(self) -> bool {
        matches!(self, Formats::Json | Formats::Both)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OutputConfig {
    pub directory: PathBuf,
    pub formats: Formats,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            directory: PathBuf::from("results"),
            formats: Formats::Both,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub algorithms: Vec<Algorithm>,
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub experiment: ExperimentSection,
    #[serde(default)]
    pub hyperparams: Hyperparams,
    #[serde(default)]
    pub eval: EvalConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Serde(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.algorithms.is_empty() {
            return Err(Error::Config("at least one algorithm must be requested".into()));
        }
        if self.eval.seeds == 0 {
            return Err(Error::Config("eval.seeds must be at least 1".into()));
        }
        if self.experiment.normal_ids.is_none() && self.experiment.m.is_none() {
            return Err(Error::Config("experiment needs `normal_ids` or `m`".into()));
        }
        if let Some(spec) = &self.dataset.synthetic {
            spec.validate()?;
        }
        self.hyperparams.validate()
    }

    pub fn combinations(&self) -> Result<Combinations> {
        let e = &self.experiment;
        match (&e.normal_ids, e.m) {
            (Some(ids), _) => Ok(Combinations::Explicit(vec![ids.clone()])),
            (None, Some(m)) => Ok(Combinations::Sweep {
                m,
                limit: if e.sweep { e.combination_limit } else { Some(1) },
            }),
            (None, None) => Err(Error::Config("experiment needs `normal_ids` or `m`".into())),
        }
    }

    pub fn benchmark_plan(&self) -> Result<BenchmarkPlan> {
        self.validate()?;
        Ok(BenchmarkPlan {
            algorithms: self.algorithms.clone(),
            combinations: self.combinations()?,
            seeds: self.eval.seeds,
            base_seed: self.eval.base_seed,
            train_fraction: self.experiment.train_fraction,
            train_subsample: self.experiment.train_subsample,
            hyperparams: self.hyperparams.clone(),
        })
    }
}
