use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::BenchError;
use crate::data::{self, BatchPlan, Dataset, SplitSpec, SynthOptions, Task};
use crate::models::Model;
use crate::optim::OptimizerConfig;

/// Where the examples come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    Csv { path: PathBuf, n_features: usize, target_columns: usize },
    Idx { images: PathBuf, labels: PathBuf },
    Synthetic {
        task: Task,
        n: usize,
        d: usize,
        #[serde(default)]
        seed: u64,
        #[serde(default)]
        options: SynthOptions,
    },
    /// `data::energy_like`.
    EnergyLike {
        #[serde(default)]
        seed: u64,
    },
}

fn default_batch() -> BatchPlan {
    BatchPlan::new(3200, 0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub source: DataSource,
    /// Keep only the first `max_rows` rows of the loaded table.
    #[serde(default)]
    pub max_rows: Option<usize>,
    #[serde(default)]
    pub split: SplitSpec,
    #[serde(default = "default_batch")]
    pub batch: BatchPlan,
    /// Defaults to on for regression, off for classification.
    #[serde(default)]
    pub standardize_inputs: Option<bool>,
    /// Regression only; defaults to on.
    #[serde(default)]
    pub standardize_targets: Option<bool>,
}

impl DatasetConfig {
    pub fn new(source: DataSource) -> Self {
        Self {
            source,
            max_rows: None,
            split: SplitSpec::default(),
            batch: default_batch(),
            standardize_inputs: None,
            standardize_targets: None,
        }
    }

    pub fn load(&self) -> Result<Dataset, BenchError> {
        let ds = match &self.source {
            DataSource::Csv { path, n_features, target_columns } => data::load_csv(path, *n_features, *target_columns)?,
            DataSource::Idx { images, labels } => data::load_idx(images, labels)?,
            DataSource::Synthetic { task, n, d, seed, options } => data::synthesize_with(*task, *n, *d, *seed, options)?.0,
            DataSource::EnergyLike { seed } => data::energy_like(*seed),
        };
        Ok(match self.max_rows {
            Some(m) if m < ds.len() => ds.select(&(0..m).collect::<Vec<_>>()),
            _ => ds,
        })
    }

    pub fn standardization(&self, task: Task) -> (bool, bool) {
        let regression = task == Task::Regression;
        (
            self.standardize_inputs.unwrap_or(regression),
            regression && self.standardize_targets.unwrap_or(true),
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputFormat {
    Jsonl,
    Csv,
}

impl OutputFormat {
    /// CSV for a `.csv` extension, JSONL otherwise.
    pub fn for_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("csv") => OutputFormat::Csv,
            _ => OutputFormat::Jsonl,
        }
    }
}

/// One training run. Batch-free models take one step per epoch and need no
/// dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: Model,
    #[serde(default)]
    pub dataset: Option<DatasetConfig>,
    pub optimizer: OptimizerConfig,
    pub epochs: u64,
    #[serde(default)]
    pub max_runtime_s: Option<f64>,
    /// Drives parameter initialisation, and shuffling via
    /// `seed ⊕ batch.shuffle_seed`.
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub output: Option<PathBuf>,
    /// Evaluate every this many steps; default once per epoch.
    #[serde(default)]
    pub eval_every_steps: Option<u64>,
    /// Starting parameters for batch-free models; otherwise drawn from
    /// `N(0, I)` with `seed`.
    #[serde(default)]
    pub init: Option<Vec<f64>>,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, BenchError> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| BenchError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, BenchError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| BenchError::Io(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<(), BenchError> {
        let config = |m: String| Err(BenchError::Config(m));
        if self.epochs == 0 {
            return config("epochs must be at least 1".into());
        }
        self.model.validate().map_err(|e| BenchError::Config(e.to_string()))?;
        self.optimizer.validate().map_err(|e| BenchError::Config(e.to_string()))?;
        if matches!(self.max_runtime_s, Some(t) if !(t > 0.0)) {
            return config("max_runtime_s must be positive".into());
        }
        if self.eval_every_steps == Some(0) {
            return config("eval_every_steps must be at least 1".into());
        }
        match (&self.dataset, self.model.is_batch_free()) {
            (None, false) => return config("this model needs a dataset block".into()),
            (Some(d), _) => {
                d.split.validate().map_err(|e| BenchError::Config(e.to_string()))?;
                if d.batch.batch_size == 0 {
                    return config("batch_size must be positive".into());
                }
            }
            _ => {}
        }
        if let (Some(init), true) = (&self.init, self.model.is_batch_free()) {
            let n = self.model.manifest().iter().map(|s| s.len()).sum::<usize>();
            if init.len() != n {
                return config(format!("init has {} values, model has {n} parameters", init.len()));
            }
        }
        Ok(())
    }
}
