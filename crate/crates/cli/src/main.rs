use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use tasb::evaluation::FusionMethod;
use tasb::pipeline::{self, PipelineConfig};
use tasb::sampler::Strategy;
use tasb::training::{InBatchLoss, TeacherMode};

/// Dense retrieval training with topic-aware sampling and dual-teacher
/// distillation.
#[derive(Parser)]
#[command(name = "tasb", version)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML configuration file; defaults apply to missing keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Global seed; overrides the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; overrides the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Write the synthetic topical corpus to <out>/data.
    Synth,
    /// Train the baseline and cluster the training queries.
    Cluster,
    /// Train the student.
    Train {
        /// random, tas or tas-balanced.
        #[arg(long)]
        strategy: Option<Strategy>,
        /// pairwise, inbatch or dual.
        #[arg(long)]
        teacher: Option<TeacherMode>,
        /// margin-mse, kldiv or listnet.
        #[arg(long)]
        inbatch_loss: Option<InBatchLoss>,
        /// Maximum training steps.
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Encode and index the collection with the trained model.
    Index,
    /// Retrieve passages for a query file and write a run.
    Search {
        /// Queries as `id<TAB>text`; defaults to the evaluation queries.
        #[arg(long)]
        queries: Option<PathBuf>,
        /// Passages retrieved per query.
        #[arg(long)]
        k: Option<usize>,
    },
    /// Score a run against relevance judgments.
    Eval {
        /// TREC run file; defaults to <out>/run.txt.
        #[arg(long)]
        run: Option<PathBuf>,
        /// TREC qrels file; defaults to the configured judgments.
        #[arg(long)]
        qrels: Option<PathBuf>,
    },
    /// Fuse two runs into one.
    Fuse {
        #[arg(long)]
        run_a: PathBuf,
        #[arg(long)]
        run_b: PathBuf,
        /// Weight of run A in [0, 1].
        #[arg(long)]
        weight: Option<f64>,
        /// min-max or rrf.
        #[arg(long)]
        method: Option<FusionMethod>,
        /// Fused run file.
        #[arg(long)]
        output: PathBuf,
    },
    /// Measure encoding and retrieval latency.
    Bench,
    /// Train every teacher mode × sampling strategy over several seeds.
    Ablation,
    /// cluster, train, index, search and eval in one go.
    Pipeline,
    /// Print the effective configuration.
    Config,
}

fn load_config(common: &Common) -> Result<PipelineConfig> {
    let mut cfg = match &common.config {
        Some(path) => PipelineConfig::load(path).with_context(|| format!("loading {}", path.display()))?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &common.out {
        cfg.out_dir = out.clone();
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = load_config(&cli.common)?;
    match cli.command {
        Command::Synth => {
            let dir = pipeline::cmd_synth(&cfg)?;
            println!("wrote {}", dir.display());
        }
        Command::Cluster => {
            let clusters = pipeline::cmd_cluster(&cfg)?;
            println!("{} clusters", clusters.k());
        }
        Command::Train {
            strategy,
            teacher,
            inbatch_loss,
            steps,
        } => {
            if let Some(s) = strategy {
                cfg.sampler.strategy = s;
            }
            if let Some(t) = teacher {
                cfg.train.teacher_mode = t;
            }
            if let Some(l) = inbatch_loss {
                cfg.train.inbatch_loss = l;
            }
            if let Some(n) = steps {
                cfg.train.max_steps = n;
            }
            cfg.validate()?;
            let outcome = pipeline::cmd_train(&cfg)?;
            match outcome.best_metric {
                Some(m) => println!("best step {} (validation nDCG@10 {m:.4})", outcome.best_step),
                None => println!("trained {} steps", outcome.steps),
            }
        }
        Command::Index => {
            let index = pipeline::cmd_index(&cfg)?;
            println!("indexed {} passages", index.len());
        }
        Command::Search { queries, k } => {
            let run = pipeline::cmd_search(&cfg, queries.as_deref(), k)?;
            println!("searched {} queries", run.len());
        }
        Command::Eval { run, qrels } => {
            let summary = pipeline::cmd_eval(&cfg, run.as_deref(), qrels.as_deref())?;
            for r in &summary.reports {
                println!("{}\t{:.4}", r.name(), r.mean());
            }
        }
        Command::Fuse {
            run_a,
            run_b,
            weight,
            method,
            output,
        } => {
            let weight = weight.unwrap_or(cfg.fusion.weight);
            let method = method.unwrap_or(cfg.fusion.method);
            let fused = pipeline::cmd_fuse(&run_a, &run_b, weight, method, &output)?;
            println!("fused {} queries", fused.len());
        }
        Command::Bench => {
            println!("batch_size\ttotal_avg_ms\ttotal_p99_ms");
            for r in pipeline::cmd_bench(&cfg)? {
                println!("{}\t{:.3}\t{:.3}", r.batch_size, r.total.mean_ms, r.total.p99_ms);
            }
        }
        Command::Ablation => {
            let report = pipeline::cmd_ablation(&cfg)?;
            print!("{}", report.table());
        }
        Command::Pipeline => {
            let summary = pipeline::cmd_pipeline(&cfg)?;
            for r in &summary.reports {
                println!("{}\t{:.4}", r.name(), r.mean());
            }
        }
        Command::Config => print!("{}", cfg.to_toml()?),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
