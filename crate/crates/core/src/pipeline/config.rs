use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::encoder::{DEFAULT_D_EMB, DEFAULT_D_FEAT};
use crate::error::{Error, Result};
use crate::evaluation::{FusionMethod, DEFAULT_BINARIZATION, DEFAULT_FUSION_WEIGHT};
use crate::sampler::{SamplerConfig, Strategy};
use crate::synthetic::SyntheticConfig;
use crate::training::{TeacherMode, TrainConfig};

/// Input files. When absent the pipeline generates a synthetic corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataPaths {
    pub collection: PathBuf,
    pub train_queries: PathBuf,
    pub eval_queries: PathBuf,
    pub qrels: PathBuf,
    pub triples: PathBuf,
    pub scores: PathBuf,
    /// Held-out queries for early stopping; judged in `qrels`.
    #[serde(default)]
    pub val_queries: Option<PathBuf>,
    /// Pre-trained baseline checkpoint; trained pairwise when absent.
    #[serde(default)]
    pub baseline: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    pub d_feat: usize,
    pub d_emb: usize,
    pub init_std: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            d_feat: DEFAULT_D_FEAT,
            d_emb: DEFAULT_D_EMB,
            init_std: 0.1,
        }
    }
}

/// Pairwise-supervised, randomly sampled model used for clustering and
/// for the validation candidate pools.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineConfig {
    pub steps: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            steps: 1000,
            learning_rate: 1e-3,
            batch_size: 32,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusterConfig {
    /// Defaults to one cluster per 200 training queries (at least 2).
    pub k: Option<usize>,
    pub max_iters: usize,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        Self {
            k: None,
            max_iters: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ValidationConfig {
    pub sample_size: usize,
    pub top_k: usize,
}

impl Default for ValidationConfig {
    fn default() -> Self {
        Self {
            sample_size: 3200,
            top_k: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub ndcg_cutoff: usize,
    pub mrr_cutoff: usize,
    pub recall_cutoff: usize,
    pub binarization: u32,
    /// Passages retrieved per query.
    pub search_depth: usize,
    pub recall_curve: Vec<usize>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            ndcg_cutoff: 10,
            mrr_cutoff: 10,
            recall_cutoff: 1000,
            binarization: DEFAULT_BINARIZATION,
            search_depth: 1000,
            recall_curve: vec![1, 5, 10, 20, 50, 100, 200, 500, 1000],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FusionConfig {
    pub weight: f64,
    pub method: FusionMethod,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            weight: DEFAULT_FUSION_WEIGHT,
            method: FusionMethod::MinMax,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub batch_sizes: Vec<usize>,
    pub repetitions: usize,
    pub k: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            batch_sizes: vec![1, 10, 2000],
            repetitions: 100,
            k: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationConfig {
    /// Number of consecutive global seeds, starting at the top-level seed.
    pub seeds: usize,
    pub strategies: Vec<Strategy>,
    pub teacher_modes: Vec<TeacherMode>,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self {
            seeds: 5,
            strategies: Strategy::ALL.to_vec(),
            teacher_modes: TeacherMode::ALL.to_vec(),
        }
    }
}

/// Whole-pipeline configuration, read from a TOML file.
///
/// The per-component seed fields inside `sampler`, `train` and `synthetic`
/// are ignored; every component seed is derived from `seed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub paths: Option<DataPaths>,
    pub synthetic: SyntheticConfig,
    pub encoder: EncoderConfig,
    pub baseline: BaselineConfig,
    pub cluster: ClusterConfig,
    pub sampler: SamplerConfig,
    pub train: TrainConfig,
    pub validation: ValidationConfig,
    pub eval: EvalConfig,
    pub fusion: FusionConfig,
    pub bench: BenchConfig,
    pub ablation: AblationConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out_dir: PathBuf::from("out"),
            paths: None,
            synthetic: SyntheticConfig::default(),
            encoder: EncoderConfig::default(),
            baseline: BaselineConfig::default(),
            cluster: ClusterConfig::default(),
            sampler: SamplerConfig {
                strategy: Strategy::TasBalanced,
                ..SamplerConfig::default()
            },
            train: TrainConfig::default(),
            validation: ValidationConfig::default(),
            eval: EvalConfig::default(),
            fusion: FusionConfig::default(),
            bench: BenchConfig::default(),
            ablation: AblationConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.synthetic.validate()?;
        self.sampler.validate()?;
        self.train.validate()?;
        if self.encoder.d_feat == 0 || self.encoder.d_emb == 0 {
            return Err(Error::Config("encoder dimensions must be positive".into()));
        }
        if !self.encoder.init_std.is_finite() || self.encoder.init_std <= 0.0 {
            return Err(Error::Config("encoder.init_std must be positive".into()));
        }
        if self.baseline.steps == 0
            || self.baseline.batch_size == 0
            || !self.baseline.learning_rate.is_finite()
            || self.baseline.learning_rate <= 0.0
        {
            return Err(Error::Config(
                "baseline steps, batch size and learning rate must be positive".into(),
            ));
        }
        if self.cluster.k == Some(0) || self.cluster.max_iters == 0 {
            return Err(Error::Config("cluster.k and cluster.max_iters must be positive".into()));
        }
        if self.validation.top_k == 0 || self.validation.sample_size == 0 {
            return Err(Error::Config("validation sizes must be positive".into()));
        }
        let e = &self.eval;
        if [e.ndcg_cutoff, e.mrr_cutoff, e.recall_cutoff, e.search_depth].contains(&0) || e.recall_curve.contains(&0) {
            return Err(Error::Config("evaluation cutoffs must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.fusion.weight) {
            return Err(Error::Config("fusion.weight must lie in [0, 1]".into()));
        }
        if self.bench.batch_sizes.contains(&0) || self.bench.repetitions == 0 || self.bench.k == 0 {
            return Err(Error::Config("bench sizes must be positive".into()));
        }
        if self.ablation.seeds == 0 || self.ablation.strategies.is_empty() || self.ablation.teacher_modes.is_empty() {
            return Err(Error::Config(
                "ablation needs at least one seed, strategy and teacher mode".into(),
            ));
        }
        Ok(())
    }
}

/// Per-component seeds derived from one global seed by fixed offsets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Seeds {
    pub corpus: u64,
    pub baseline_init: u64,
    pub baseline_sampler: u64,
    pub cluster: u64,
    pub validation: u64,
    pub init: u64,
    pub sampler: u64,
    pub teacher: u64,
}

impl Seeds {
    pub fn derive(global: u64) -> Self {
        let base = global.wrapping_mul(0x9e37_79b9_7f4a_7c15);
        let at = |offset: u64| base.wrapping_add(offset);
        Self {
            corpus: at(1),
            baseline_init: at(2),
            baseline_sampler: at(3),
            cluster: at(4),
            validation: at(5),
            init: at(6),
            sampler: at(7),
            teacher: at(8),
        }
    }
}
