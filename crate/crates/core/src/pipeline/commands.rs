use std::collections::HashSet;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use crate::clustering::{cluster_queries, TopicClusters};
use crate::corpus::{
    load_collection, load_qrels, load_queries, load_run, load_triples_with_scores, write_run, Qrels, Run, TextStore,
    TrainingData, PASSAGE_CAP, QUERY_CAP,
};
use crate::encoder::StudentModel;
use crate::error::{Error, Result};
use crate::evaluation::{
    fuse_runs, mrr_at, ndcg_at, recall_at, recall_curve, write_metric_tsv, write_recall_curve_tsv, FusionMethod,
    MetricReport,
};
use crate::index::{build_index, latency_report, write_latency_tsv, DenseIndex, LatencyReport};
use crate::io_util::atomic_write;
use crate::sampler::{SamplerConfig, Strategy, TrainingPool};
use crate::synthetic::{self, SyntheticConfig};
use crate::training::{
    build_validation_set, train, TeacherMode, TrainConfig, TrainInputs, TrainOutcome, ValidationData, ValidationParams,
    ValidationSet,
};

use super::{PipelineConfig, Seeds};

/// Run tag written into run files.
const RUN_TAG: &str = "tasb";

/// Artifact locations under the output directory.
#[derive(Debug, Clone)]
pub struct Layout {
    root: PathBuf,
}

impl Layout {
    pub fn new(root: &Path) -> Self {
        Self { root: root.to_owned() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn data_dir(&self) -> PathBuf {
        self.root.join("data")
    }

    pub fn baseline(&self) -> PathBuf {
        self.root.join("baseline.ckpt")
    }

    pub fn clusters(&self) -> PathBuf {
        self.root.join("clusters.bin")
    }

    pub fn clusters_tsv(&self) -> PathBuf {
        self.root.join("clusters.tsv")
    }

    pub fn validation(&self) -> PathBuf {
        self.root.join("validation.tsv")
    }

    pub fn train_dir(&self) -> PathBuf {
        self.root.join("train")
    }

    pub fn model(&self) -> PathBuf {
        self.root.join("model.ckpt")
    }

    pub fn index(&self) -> PathBuf {
        self.root.join("index.bin")
    }

    pub fn run(&self) -> PathBuf {
        self.root.join("run.txt")
    }

    pub fn eval_dir(&self) -> PathBuf {
        self.root.join("eval")
    }

    pub fn latency(&self) -> PathBuf {
        self.root.join("latency.tsv")
    }

    pub fn ablation_dir(&self) -> PathBuf {
        self.root.join("ablation")
    }
}

/// Every input the pipeline consumes.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub passages: TextStore,
    pub train_queries: TextStore,
    pub val_queries: Option<TextStore>,
    pub eval_queries: TextStore,
    pub qrels: Qrels,
    pub training: TrainingData,
}

/// Loads the configured files or, without `paths`, generates the synthetic
/// corpus and writes it to `<out>/data`.
pub fn load_dataset(cfg: &PipelineConfig) -> Result<Dataset> {
    let data = match &cfg.paths {
        Some(p) => {
            let passages = load_collection(&p.collection, PASSAGE_CAP)?;
            let train_queries = load_queries(&p.train_queries, QUERY_CAP)?;
            let val_queries = p
                .val_queries
                .as_deref()
                .map(|v| load_queries(v, QUERY_CAP))
                .transpose()?;
            let eval_queries = load_queries(&p.eval_queries, QUERY_CAP)?;
            let qrels = load_qrels(&p.qrels)?;
            let training = load_triples_with_scores(&p.triples, &p.scores)?;
            Dataset {
                passages,
                train_queries,
                val_queries,
                eval_queries,
                qrels,
                training,
            }
        }
        None => {
            let corpus = synthetic::generate(&SyntheticConfig {
                seed: Seeds::derive(cfg.seed).corpus,
                ..cfg.synthetic.clone()
            })?;
            corpus.write(&Layout::new(&cfg.out_dir).data_dir())?;
            Dataset {
                passages: corpus.passages,
                train_queries: corpus.train_queries,
                val_queries: Some(corpus.val_queries).filter(|v| !v.is_empty()),
                eval_queries: corpus.test_queries,
                qrels: corpus.qrels,
                training: corpus.training,
            }
        }
    };
    data.training.check_integrity(&data.train_queries, &data.passages)?;
    Ok(data)
}

/// Writes the synthetic corpus to `<out>/data`.
pub fn cmd_synth(cfg: &PipelineConfig) -> Result<PathBuf> {
    if cfg.paths.is_some() {
        return Err(Error::Config(
            "`synth` generates data; remove the [paths] section".into(),
        ));
    }
    load_dataset(cfg)?;
    Ok(Layout::new(&cfg.out_dir).data_dir())
}

fn initial_model(cfg: &PipelineConfig, seed: u64) -> Result<StudentModel> {
    StudentModel::new(cfg.encoder.d_feat, cfg.encoder.d_emb, cfg.encoder.init_std, seed)
}

/// Pairwise teacher with random batches.
pub(crate) fn train_baseline(cfg: &PipelineConfig, data: &Dataset, seeds: &Seeds) -> Result<StudentModel> {
    if let Some(path) = cfg.paths.as_ref().and_then(|p| p.baseline.as_ref()) {
        return StudentModel::load(path);
    }
    let train_cfg = TrainConfig {
        teacher_mode: TeacherMode::Pairwise,
        learning_rate: cfg.baseline.learning_rate,
        max_steps: cfg.baseline.steps,
        eval_interval: cfg.baseline.steps,
        dump_batches: 0,
        ..cfg.train.clone()
    };
    let sampler = SamplerConfig {
        strategy: Strategy::Random,
        batch_size: cfg.baseline.batch_size,
        seed: seeds.baseline_sampler,
        ..cfg.sampler.clone()
    };
    let outcome = train(
        &train_cfg,
        TrainInputs {
            model: initial_model(cfg, seeds.baseline_init)?,
            queries: &data.train_queries,
            passages: &data.passages,
            pool: Arc::new(TrainingPool::from_training_data(&data.training)?),
            clusters: None,
            sampler,
            validation: None,
            out_dir: None,
        },
    )?;
    Ok(outcome.best)
}

pub(crate) fn compute_clusters(
    cfg: &PipelineConfig,
    data: &Dataset,
    seeds: &Seeds,
    baseline: &StudentModel,
) -> Result<TopicClusters> {
    cluster_queries(
        baseline,
        &data.train_queries,
        cfg.cluster.k,
        cfg.cluster.max_iters,
        seeds.cluster,
    )
}

/// Trains (or loads) the baseline and clusters the training queries.
pub fn cmd_cluster(cfg: &PipelineConfig) -> Result<TopicClusters> {
    let layout = Layout::new(&cfg.out_dir);
    let seeds = Seeds::derive(cfg.seed);
    let data = load_dataset(cfg)?;
    let baseline = train_baseline(cfg, &data, &seeds)?;
    baseline.save(&layout.baseline())?;
    let clusters = compute_clusters(cfg, &data, &seeds, &baseline)?;
    clusters.save(&layout.clusters())?;
    clusters.write_tsv(&layout.clusters_tsv())?;
    log::info!("{} queries in {} clusters", data.train_queries.len(), clusters.k());
    Ok(clusters)
}

/// Validation pools from the baseline, when held-out queries exist.
pub(crate) fn validation_set(
    cfg: &PipelineConfig,
    data: &Dataset,
    seeds: &Seeds,
    baseline: &StudentModel,
) -> Result<Option<ValidationSet>> {
    let Some(val_queries) = &data.val_queries else {
        log::warn!("no validation queries; training runs without early stopping");
        return Ok(None);
    };
    let index = build_index(baseline, &data.passages)?;
    let excluded: HashSet<String> = data.eval_queries.iter().map(|q| q.id.clone()).collect();
    let params = ValidationParams {
        sample_size: cfg.validation.sample_size,
        top_k: cfg.validation.top_k,
        seed: seeds.validation,
    };
    build_validation_set(baseline, &index, val_queries, &data.qrels, &excluded, &params).map(Some)
}

/// One training run with the given teacher and sampling configuration.
#[allow(clippy::too_many_arguments)]
pub(crate) fn run_training(
    cfg: &PipelineConfig,
    data: &Dataset,
    seeds: &Seeds,
    clusters: Option<&TopicClusters>,
    validation: Option<&ValidationSet>,
    train_cfg: &TrainConfig,
    sampler_cfg: &SamplerConfig,
    out_dir: &Path,
) -> Result<TrainOutcome> {
    let train_cfg = TrainConfig {
        teacher_seed: seeds.teacher,
        ..train_cfg.clone()
    };
    let sampler = SamplerConfig {
        seed: seeds.sampler,
        ..sampler_cfg.clone()
    };
    let val_queries = data.val_queries.as_ref();
    train(
        &train_cfg,
        TrainInputs {
            model: initial_model(cfg, seeds.init)?,
            queries: &data.train_queries,
            passages: &data.passages,
            pool: Arc::new(TrainingPool::from_training_data(&data.training)?),
            clusters: clusters.filter(|_| sampler.strategy.needs_clusters()),
            sampler,
            validation: validation.zip(val_queries).map(|(set, queries)| ValidationData {
                set,
                queries,
                qrels: &data.qrels,
            }),
            out_dir: Some(out_dir),
        },
    )
}

/// Trains the configured model. Reuses the baseline and clusters in the
/// output directory when present.
pub fn cmd_train(cfg: &PipelineConfig) -> Result<TrainOutcome> {
    let layout = Layout::new(&cfg.out_dir);
    let seeds = Seeds::derive(cfg.seed);
    let data = load_dataset(cfg)?;
    let baseline = if layout.baseline().exists() {
        StudentModel::load(&layout.baseline())?
    } else {
        let b = train_baseline(cfg, &data, &seeds)?;
        b.save(&layout.baseline())?;
        b
    };
    let clusters = if !cfg.sampler.strategy.needs_clusters() {
        None
    } else if layout.clusters().exists() {
        Some(TopicClusters::load(&layout.clusters())?)
    } else {
        let c = compute_clusters(cfg, &data, &seeds, &baseline)?;
        c.save(&layout.clusters())?;
        c.write_tsv(&layout.clusters_tsv())?;
        Some(c)
    };
    let validation = validation_set(cfg, &data, &seeds, &baseline)?;
    if let Some(v) = &validation {
        v.save(&layout.validation())?;
    }
    let outcome = run_training(
        cfg,
        &data,
        &seeds,
        clusters.as_ref(),
        validation.as_ref(),
        &cfg.train,
        &cfg.sampler,
        &layout.train_dir(),
    )?;
    outcome.best.save(&layout.model())?;
    Ok(outcome)
}

/// Indexes the collection with the trained model.
pub fn cmd_index(cfg: &PipelineConfig) -> Result<DenseIndex> {
    let layout = Layout::new(&cfg.out_dir);
    let model = StudentModel::load(&layout.model())?;
    let data = load_dataset(cfg)?;
    let index = build_index(&model, &data.passages)?;
    index.save(&layout.index())?;
    log::info!("indexed {} passages in {:.1} ms", index.len(), index.build_ms());
    Ok(index)
}

/// Encodes `queries` and retrieves the top `k` passages for each.
pub fn search_run(model: &StudentModel, index: &DenseIndex, queries: &TextStore, k: usize) -> Result<Run> {
    if index.model_checksum() != model.checksum() {
        return Err(Error::invalid("index was built with a different model; rebuild it"));
    }
    let vectors = queries
        .iter()
        .map(|q| model.encode_tokens(&q.tokens))
        .collect::<Result<Vec<_>>>()?;
    let hits = index.batch_search(&vectors, k)?;
    let mut run = Run::new();
    for (q, ranking) in queries.iter().zip(hits) {
        run.insert_ranked(q.id.clone(), ranking);
    }
    Ok(run)
}

/// Searches the evaluation queries (or `queries`) and writes the run file.
pub fn cmd_search(cfg: &PipelineConfig, queries: Option<&Path>, k: Option<usize>) -> Result<Run> {
    let layout = Layout::new(&cfg.out_dir);
    let model = StudentModel::load(&layout.model())?;
    let index = DenseIndex::load(&layout.index())?;
    let queries = match queries {
        Some(path) => load_queries(path, QUERY_CAP)?,
        None => load_dataset(cfg)?.eval_queries,
    };
    let run = search_run(&model, &index, &queries, k.unwrap_or(cfg.eval.search_depth))?;
    write_run(&run, &layout.run(), RUN_TAG)?;
    Ok(run)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalSummary {
    /// nDCG, MRR and recall in that order.
    pub reports: Vec<MetricReport>,
    pub recall_curve: Vec<(usize, f64)>,
}

impl EvalSummary {
    pub fn ndcg(&self) -> f64 {
        self.reports[0].mean()
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        for r in &self.reports {
            let file = r.name().to_lowercase().replace('@', "_at_");
            write_metric_tsv(r, &dir.join(format!("{file}.tsv")))?;
        }
        write_recall_curve_tsv(&self.recall_curve, &dir.join("recall_curve.tsv"))?;
        atomic_write(&dir.join("summary.tsv"), |w| {
            writeln!(w, "metric\tvalue\tqueries")?;
            for r in &self.reports {
                writeln!(w, "{}\t{:.6}\t{}", r.name(), r.mean(), r.len())?;
            }
            Ok(())
        })
    }
}

pub fn evaluate_run(run: &Run, qrels: &Qrels, eval: &super::EvalConfig) -> Result<EvalSummary> {
    Ok(EvalSummary {
        reports: vec![
            ndcg_at(run, qrels, eval.ndcg_cutoff)?,
            mrr_at(run, qrels, eval.mrr_cutoff, eval.binarization)?,
            recall_at(run, qrels, eval.recall_cutoff, eval.binarization)?,
        ],
        recall_curve: recall_curve(run, qrels, &eval.recall_curve, eval.binarization)?,
    })
}

/// Scores a run file against judgments and writes the metric tables.
pub fn cmd_eval(cfg: &PipelineConfig, run: Option<&Path>, qrels: Option<&Path>) -> Result<EvalSummary> {
    let layout = Layout::new(&cfg.out_dir);
    let run = load_run(run.unwrap_or(&layout.run()))?;
    let qrels = match (qrels, &cfg.paths) {
        (Some(path), _) => load_qrels(path)?,
        (None, Some(p)) => load_qrels(&p.qrels)?,
        (None, None) => load_dataset(cfg)?.qrels,
    };
    let summary = evaluate_run(&run, &qrels, &cfg.eval)?;
    summary.write(&layout.eval_dir())?;
    Ok(summary)
}

pub fn cmd_fuse(run_a: &Path, run_b: &Path, weight: f64, method: FusionMethod, out: &Path) -> Result<Run> {
    let fused = fuse_runs(&load_run(run_a)?, &load_run(run_b)?, weight, method)?;
    write_run(&fused, out, "fused")?;
    Ok(fused)
}

/// Latency of encoding plus exact retrieval per configured batch size.
pub fn cmd_bench(cfg: &PipelineConfig) -> Result<Vec<LatencyReport>> {
    let layout = Layout::new(&cfg.out_dir);
    let model = StudentModel::load(&layout.model())?;
    let index = if layout.index().exists() {
        DenseIndex::load(&layout.index())?
    } else {
        cmd_index(cfg)?
    };
    let queries = load_dataset(cfg)?.eval_queries;
    let reports = cfg
        .bench
        .batch_sizes
        .iter()
        .map(|&b| latency_report(&model, &index, &queries, cfg.bench.k, b, cfg.bench.repetitions))
        .collect::<Result<Vec<_>>>()?;
    write_latency_tsv(&reports, &layout.latency())?;
    Ok(reports)
}

/// cluster → train → index → search → eval.
pub fn cmd_pipeline(cfg: &PipelineConfig) -> Result<EvalSummary> {
    cmd_cluster(cfg)?;
    cmd_train(cfg)?;
    cmd_index(cfg)?;
    cmd_search(cfg, None, None)?;
    cmd_eval(cfg, None, None)
}
