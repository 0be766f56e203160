//! Run configuration: one TOML file of flat training keys, artifact paths and
//! a `[synth]` table, overridden by command-line flags.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sesim_core::model::{ModelDims, PretextMode};
use sesim_core::trainer::{MetaObjective, TaskKind, TrainConfig};
use sesim_core::PairSamplerConfig;

use crate::error::{Error, Result};
use crate::synth::SynthConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum TaskArg {
    Link,
    Node,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PretextArg {
    Regression,
    Classification,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetaArg {
    Validation,
    Lookahead,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub task: TaskArg,
    pub epochs: usize,
    pub lr: f64,
    pub meta_lr: f64,
    pub weight_decay: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub batch_size: usize,
    pub val_batch_size: usize,
    pub pretext_batch_size: usize,
    pub train_frac: f64,
    pub val_frac: f64,
    pub j_max: u8,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub metapath_count: Option<usize>,
    pub pretext_mode: PretextArg,
    pub meta_objective: MetaArg,
    pub vanilla: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fixed_contribution: Option<f64>,
    pub hidden: usize,
    pub embed: usize,
    pub primary_hidden: usize,
    pub contribution_hidden: usize,
    pub pair_targets: usize,
    pub pair_neighbors: usize,
    pub dense_cap: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bundle: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub labels: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub history: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    pub synth: SynthConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        RunConfig {
            seed: t.seed,
            task: TaskArg::Link,
            epochs: t.epochs,
            lr: t.lr,
            meta_lr: t.meta_lr,
            weight_decay: t.weight_decay,
            adam_beta1: t.adam_beta1,
            adam_beta2: t.adam_beta2,
            adam_eps: t.adam_eps,
            batch_size: t.batch_size,
            val_batch_size: t.val_batch_size,
            pretext_batch_size: t.pretext_batch_size,
            train_frac: t.train_frac,
            val_frac: t.val_frac,
            j_max: t.j_max,
            metapath_count: t.metapath_count,
            pretext_mode: PretextArg::Regression,
            meta_objective: MetaArg::Validation,
            vanilla: t.vanilla,
            fixed_contribution: t.fixed_contribution,
            hidden: t.dims.hidden,
            embed: t.dims.embed,
            primary_hidden: t.dims.primary_hidden,
            contribution_hidden: t.dims.contribution_hidden,
            pair_targets: t.pair_sampler.target_nodes_per_metapath,
            pair_neighbors: t.pair_sampler.neighbors_per_target,
            dense_cap: t.dense_cap,
            bundle: None,
            labels: None,
            checkpoint: None,
            history: None,
            out: None,
            synth: SynthConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> std::result::Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run configuration serializes")
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            lr: self.lr,
            meta_lr: self.meta_lr,
            weight_decay: self.weight_decay,
            adam_beta1: self.adam_beta1,
            adam_beta2: self.adam_beta2,
            adam_eps: self.adam_eps,
            batch_size: self.batch_size,
            val_batch_size: self.val_batch_size,
            pretext_batch_size: self.pretext_batch_size,
            epochs: self.epochs,
            train_frac: self.train_frac,
            val_frac: self.val_frac,
            seed: self.seed,
            task: match self.task {
                TaskArg::Link => TaskKind::Link,
                TaskArg::Node => TaskKind::Node,
            },
            pretext_mode: match self.pretext_mode {
                PretextArg::Regression => PretextMode::Regression,
                PretextArg::Classification => PretextMode::Classification,
            },
            j_max: self.j_max,
            metapath_count: self.metapath_count,
            dims: ModelDims {
                input: 0,
                hidden: self.hidden,
                embed: self.embed,
                primary_hidden: self.primary_hidden,
                contribution_hidden: self.contribution_hidden,
            },
            pair_sampler: PairSamplerConfig {
                target_nodes_per_metapath: self.pair_targets,
                neighbors_per_target: self.pair_neighbors,
                seed: self.seed,
            },
            vanilla: self.vanilla,
            meta_objective: match self.meta_objective {
                MetaArg::Validation => MetaObjective::ValidationPrimary,
                MetaArg::Lookahead => MetaObjective::PretextLookahead,
            },
            fixed_contribution: self.fixed_contribution,
            dense_cap: self.dense_cap,
        }
    }
}
