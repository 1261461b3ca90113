//! Experiment configuration, loaded from TOML or JSON and then patched by
//! command-line flags.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use lstm_fsa::{GrammarKind, KMeansConfig, LabelMode, NetworkConfig, PipelineConfig, SweepConfig, TrainConfig};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusSizes {
    pub train: usize,
    pub test: usize,
    pub eval: usize,
    /// Symbols per flow when the grammar is CERG.
    pub flow_length: usize,
}

impl Default for CorpusSizes {
    fn default() -> Self {
        CorpusSizes {
            train: 10_000,
            test: 2_000,
            eval: 500,
            flow_length: 1_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusteringSettings {
    /// Cluster count for `extract`.
    pub k: usize,
    /// Cluster counts for `sweep`.
    pub k_list: Vec<usize>,
    pub restarts: usize,
    pub max_iter: usize,
    /// Seed for k-means and for picking the extracted sequences.
    pub seed: u64,
    /// Patterns kept for extraction, as whole sequences.
    pub subsample: usize,
    /// Keep only the first records of the trace instead of subsampling.
    pub trace_limit: Option<usize>,
    pub silhouette_points: usize,
}

impl Default for ClusteringSettings {
    fn default() -> Self {
        ClusteringSettings {
            k: 100,
            k_list: vec![6, 10, 25, 50, 100, 200, 300, 400, 500],
            restarts: 10,
            max_iter: 300,
            seed: 0,
            subsample: 5000,
            trace_limit: None,
            silhouette_points: 5000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSettings {
    pub n_sims: usize,
    pub base_seed: u64,
    /// 0 uses every core.
    pub workers: usize,
}

impl Default for SweepSettings {
    fn default() -> Self {
        SweepSettings {
            n_sims: 10,
            base_seed: 0,
            workers: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub grammar: GrammarKind,
    /// Seed for corpus generation.
    pub seed: u64,
    pub corpus: CorpusSizes,
    pub network: NetworkConfig,
    pub training: TrainConfig,
    pub clustering: ClusteringSettings,
    pub sweep: SweepSettings,
    pub output_dir: PathBuf,
    pub flow_edges: bool,
    pub label_mode: LabelMode,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            grammar: GrammarKind::Rg,
            seed: 0,
            corpus: CorpusSizes::default(),
            network: NetworkConfig::default(),
            training: TrainConfig::default(),
            clustering: ClusteringSettings::default(),
            sweep: SweepSettings::default(),
            output_dir: PathBuf::from("runs"),
            flow_edges: true,
            label_mode: LabelMode::Short,
        }
    }
}

/// A configuration together with the file text it came from.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: ExperimentConfig,
    pub source: Option<String>,
}

impl LoadedConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(LoadedConfig {
                config: ExperimentConfig::default(),
                source: None,
            });
        };
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let config = parse_config(&text, path)?;
        Ok(LoadedConfig {
            config,
            source: Some(text),
        })
    }
}

fn parse_config(text: &str, path: &Path) -> Result<ExperimentConfig> {
    let json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
    if json {
        serde_json::from_str(text).with_context(|| format!("parsing JSON config {}", path.display()))
    } else {
        toml::from_str(text).with_context(|| format!("parsing TOML config {}", path.display()))
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let c = &self.corpus;
        if c.train == 0 || c.test == 0 || c.eval == 0 {
            bail!("corpus sizes must be at least 1");
        }
        if self.grammar == GrammarKind::Cerg && c.flow_length == 0 {
            bail!("flow_length must be at least 1");
        }
        let t = &self.training;
        if !(t.learning_rate.is_finite() && t.learning_rate >= 0.0) {
            bail!("learning rate must be a finite non-negative number");
        }
        if !(t.lr_decay.is_finite() && t.lr_decay >= 0.0) {
            bail!("lr_decay must be a finite non-negative number");
        }
        if t.epochs == 0 {
            bail!("epochs must be at least 1");
        }
        if t.truncation == Some(0) {
            bail!("truncation window must be at least 1");
        }
        if self.network.n_blocks == 0 || self.network.cells_per_block == 0 {
            bail!("the network needs at least one block and one cell");
        }
        let k = &self.clustering;
        if k.k < 2 {
            bail!("k must be at least 2");
        }
        if k.k_list.is_empty() || k.k_list.iter().any(|&x| x < 2) {
            bail!("k_list must be non-empty with every k at least 2");
        }
        if k.restarts == 0 || k.max_iter == 0 || k.subsample == 0 || k.silhouette_points == 0 {
            bail!("restarts, max_iter, subsample and silhouette_points must be at least 1");
        }
        if k.trace_limit == Some(0) {
            bail!("trace_limit must be at least 1");
        }
        if self.sweep.n_sims == 0 {
            bail!("n_sims must be at least 1");
        }
        Ok(())
    }

    pub fn pipeline(&self) -> PipelineConfig {
        PipelineConfig {
            kmeans: KMeansConfig {
                n_init: self.clustering.restarts,
                max_iter: self.clustering.max_iter,
            },
            flow_edges: self.flow_edges,
            silhouette_points: self.clustering.silhouette_points,
        }
    }

    pub fn sweep_config(&self) -> SweepConfig {
        SweepConfig {
            k_list: self.clustering.k_list.clone(),
            n_sims: self.sweep.n_sims,
            base_seed: self.sweep.base_seed,
            subsample: self.clustering.subsample,
            workers: self.sweep.workers,
            pipeline: self.pipeline(),
        }
    }
}
