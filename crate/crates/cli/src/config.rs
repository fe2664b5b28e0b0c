use std::fs;
use std::path::{Path, PathBuf};

use icrlsm_core::dataset::{GraphSource, SplitCounts};
use icrlsm_core::dci::RegressorConfig;
use icrlsm_core::graph::graph_from_registry;
use icrlsm_core::scm::ScmInit;
use icrlsm_core::trainer::TrainConfig;
use icrlsm_core::{Error, Result};
use serde::{Deserialize, Serialize};

pub const DESK_EPOCHS: usize = 50;
pub const PAPER_EPOCHS: usize = 100;

/// Graph for one experiment: a registry name or a random DAG.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GraphChoice {
    Name(String),
    Random { n: usize, edge_prob: f64 },
}

impl GraphChoice {
    pub fn source(&self) -> GraphSource {
        match self {
            GraphChoice::Name(name) => GraphSource::Registry(name.clone()),
            GraphChoice::Random { n, edge_prob } => GraphSource::Random {
                n: *n,
                edge_prob: *edge_prob,
            },
        }
    }

    pub fn label(&self) -> String {
        match self {
            GraphChoice::Name(name) => name.clone(),
            GraphChoice::Random { n, edge_prob } => format!("random(n={n}, p={edge_prob})"),
        }
    }
}

/// Options read only by the suite commands.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SuiteOptions {
    /// Graphs swept by `table2`.
    pub graphs: Vec<String>,
    /// Graph whose SCM settings `ablation` perturbs.
    pub base_graph: String,
    /// `post_loc_mean` of the "significantly different" ablation row.
    pub intense_post_loc_mean: f64,
    /// `post_loc_mean` of the "almost similar" ablation row.
    pub similar_post_loc_mean: f64,
    pub n_min: usize,
    pub n_max: usize,
    /// Edge probability of the random graphs drawn by `scaling`.
    pub edge_prob: f64,
}

impl Default for SuiteOptions {
    fn default() -> Self {
        Self {
            graphs: icrlsm_core::graph::REGISTRY_NAMES.iter().map(|s| s.to_string()).collect(),
            base_graph: "G3".into(),
            intense_post_loc_mean: 10.0,
            similar_post_loc_mean: 1.0,
            n_min: 5,
            n_max: 10,
            edge_prob: 0.5,
        }
    }
}

/// Everything one CLI invocation needs. Also the `config` field of
/// `run_manifest.json`, so a manifest can be fed back through `--config`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub graph: GraphChoice,
    pub scm: ScmInit,
    pub counts: SplitCounts,
    pub train: TrainConfig,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    /// Existing dataset for `train` and `eval`; `train` generates one per seed when absent.
    pub data_dir: Option<PathBuf>,
    /// Checkpoint (or training run directory) read by `eval`.
    pub checkpoint: Option<PathBuf>,
    pub regressor: RegressorConfig,
    pub suite: SuiteOptions,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            graph: GraphChoice::Name("G3".into()),
            scm: ScmInit::default(),
            counts: SplitCounts::DESK,
            train: TrainConfig {
                epochs: DESK_EPOCHS,
                ..TrainConfig::default()
            },
            seeds: vec![0],
            output_dir: PathBuf::from("runs"),
            data_dir: None,
            checkpoint: None,
            regressor: RegressorConfig::default(),
            suite: SuiteOptions::default(),
        }
    }
}

impl ExperimentConfig {
    /// Reads an experiment config, or the `config` field of a run manifest.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let schema = |e: serde_json::Error| Error::Schema(format!("{}: {e}", path.display()));
        let value: serde_json::Value = serde_json::from_str(&text).map_err(schema)?;
        let value = match value.get("config") {
            Some(inner) if value.get("outputs").is_some() => inner.clone(),
            _ => value,
        };
        serde_json::from_value(value).map_err(schema)
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::InvalidArgument("seed list is empty".into()));
        }
        if self.counts.train == 0 || self.counts.val == 0 || self.counts.test == 0 {
            return Err(Error::InvalidArgument("dataset counts must be positive".into()));
        }
        self.train.validate()?;
        match &self.graph {
            GraphChoice::Name(name) => {
                graph_from_registry(name)?;
            }
            GraphChoice::Random { n, edge_prob } => {
                if *n == 0 || !(0.0..=1.0).contains(edge_prob) {
                    return Err(Error::InvalidArgument("random graph needs n >= 1 and edge_prob in [0, 1]".into()));
                }
            }
        }
        let s = &self.suite;
        if s.n_min == 0 || s.n_min > s.n_max {
            return Err(Error::InvalidArgument("need 1 <= n_min <= n_max".into()));
        }
        if !(0.0..=1.0).contains(&s.edge_prob) {
            return Err(Error::InvalidArgument("edge_prob must lie in [0, 1]".into()));
        }
        Ok(())
    }
}
