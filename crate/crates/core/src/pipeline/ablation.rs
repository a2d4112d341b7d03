use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;

use crate::corpus::{write_run, Run};
use crate::encoder::StudentModel;
use crate::error::{Error, Result};
use crate::evaluation::{robustness_report, write_robustness_tsv, RobustnessReport};
use crate::index::build_index;
use crate::io_util::atomic_write;
use crate::sampler::{SamplerConfig, Strategy};
use crate::training::{TeacherMode, TrainConfig};

use super::commands::{compute_clusters, run_training, train_baseline, validation_set};
use super::{evaluate_run, load_dataset, search_run, Dataset, EvalSummary, Layout, PipelineConfig, Seeds};

/// One teacher × sampling configuration across all seeds.
#[derive(Debug, Clone)]
pub struct AblationCell {
    pub mode: TeacherMode,
    pub strategy: Strategy,
    /// Held-out metrics of the selected checkpoint, one per seed.
    pub per_seed: Vec<EvalSummary>,
    /// `(best_step, steps_run)` per seed.
    pub steps: Vec<(usize, usize)>,
}

impl AblationCell {
    pub fn label(&self) -> String {
        format!("{}-{}", self.mode, self.strategy)
    }

    pub fn ndcg(&self) -> Vec<f64> {
        self.per_seed.iter().map(EvalSummary::ndcg).collect()
    }

    pub fn mean_ndcg(&self) -> f64 {
        mean(&self.ndcg())
    }
}

#[derive(Debug, Clone)]
pub struct AblationReport {
    pub seeds: Vec<u64>,
    /// Metrics of the untrained initial model per seed.
    pub untrained: Vec<EvalSummary>,
    pub cells: Vec<AblationCell>,
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

impl AblationReport {
    pub fn cell(&self, mode: TeacherMode, strategy: Strategy) -> Option<&AblationCell> {
        self.cells.iter().find(|c| c.mode == mode && c.strategy == strategy)
    }

    /// Highest mean nDCG; ties go to the earlier cell.
    pub fn best_cell(&self) -> &AblationCell {
        self.cells
            .iter()
            .reduce(|best, c| if c.mean_ndcg() > best.mean_ndcg() { c } else { best })
            .expect("ablation has at least one cell")
    }

    pub fn robustness(&self, cell: &AblationCell) -> Result<RobustnessReport> {
        let instances: Vec<_> = cell.per_seed.iter().map(|s| s.reports.clone()).collect();
        robustness_report(&instances)
    }

    /// Mean metrics per configuration, with the untrained model first.
    pub fn table(&self) -> String {
        let mut out = String::from("teacher\tsampling");
        for r in &self.untrained[0].reports {
            let _ = write!(out, "\t{}", r.name());
        }
        out.push('\n');
        let row = |out: &mut String, teacher: &str, sampling: &str, summaries: &[EvalSummary]| {
            let _ = write!(out, "{teacher}\t{sampling}");
            for m in 0..summaries[0].reports.len() {
                let values: Vec<f64> = summaries.iter().map(|s| s.reports[m].mean()).collect();
                let _ = write!(out, "\t{:.4}", mean(&values));
            }
            out.push('\n');
        };
        row(&mut out, "none", "untrained", &self.untrained);
        for c in &self.cells {
            row(&mut out, c.mode.as_str(), c.strategy.as_str(), &c.per_seed);
        }
        out
    }

    /// One line per seed and configuration.
    pub fn results(&self) -> String {
        let mut out = String::from("seed\tteacher\tsampling");
        for r in &self.untrained[0].reports {
            let _ = write!(out, "\t{}", r.name());
        }
        out.push_str("\tbest_step\tsteps\n");
        for (i, seed) in self.seeds.iter().enumerate() {
            let _ = write!(out, "{seed}\tnone\tuntrained");
            for r in &self.untrained[i].reports {
                let _ = write!(out, "\t{:.6}", r.mean());
            }
            out.push_str("\t0\t0\n");
            for c in &self.cells {
                let _ = write!(out, "{seed}\t{}\t{}", c.mode, c.strategy);
                for r in &c.per_seed[i].reports {
                    let _ = write!(out, "\t{:.6}", r.mean());
                }
                let _ = writeln!(out, "\t{}\t{}", c.steps[i].0, c.steps[i].1);
            }
        }
        out
    }
}

/// Ranks kept in each per-cell run dump.
pub const RUN_DUMP_DEPTH: usize = 100;

fn held_out(model: &StudentModel, data: &Dataset, cfg: &PipelineConfig) -> Result<(EvalSummary, Run)> {
    let index = build_index(model, &data.passages)?;
    let run = search_run(model, &index, &data.eval_queries, cfg.eval.search_depth)?;
    Ok((evaluate_run(&run, &data.qrels, &cfg.eval)?, run))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    atomic_write(path, |w| w.write_all(text.as_bytes()))
}

/// Trains every teacher mode × sampling strategy for each seed and
/// evaluates the selected checkpoints on the held-out queries.
///
/// Writes per-run logs and a truncated run file under
/// `<out>/ablation/seed<N>/<teacher>-<sampling>/`
/// plus `results.tsv`, `table.tsv` and `robustness.tsv`.
pub fn cmd_ablation(cfg: &PipelineConfig) -> Result<AblationReport> {
    cfg.validate()?;
    let root = Layout::new(&cfg.out_dir).ablation_dir();
    let configs: Vec<(TeacherMode, Strategy)> = cfg
        .ablation
        .teacher_modes
        .iter()
        .flat_map(|&m| cfg.ablation.strategies.iter().map(move |&s| (m, s)))
        .collect();
    let seeds: Vec<u64> = (0..cfg.ablation.seeds as u64)
        .map(|i| cfg.seed.wrapping_add(i))
        .collect();
    let mut untrained = Vec::new();
    let mut per_config: Vec<Vec<(EvalSummary, (usize, usize))>> = vec![Vec::new(); configs.len()];

    for &seed in &seeds {
        let seed_dir = root.join(format!("seed{seed}"));
        let seed_cfg = PipelineConfig {
            seed,
            out_dir: seed_dir.clone(),
            ..cfg.clone()
        };
        let derived = Seeds::derive(seed);
        let data = load_dataset(&seed_cfg)?;
        let baseline = train_baseline(&seed_cfg, &data, &derived)?;
        let clusters = if configs.iter().any(|(_, s)| s.needs_clusters()) {
            Some(compute_clusters(&seed_cfg, &data, &derived, &baseline)?)
        } else {
            None
        };
        if let Some(c) = &clusters {
            c.write_tsv(&seed_dir.join("clusters.tsv"))?;
        }
        let validation = validation_set(&seed_cfg, &data, &derived, &baseline)?;
        let init = StudentModel::new(
            cfg.encoder.d_feat,
            cfg.encoder.d_emb,
            cfg.encoder.init_std,
            derived.init,
        )?;
        untrained.push(held_out(&init, &data, &seed_cfg)?.0);

        let outcomes = configs
            .par_iter()
            .map(|&(mode, strategy)| {
                let train_cfg = TrainConfig {
                    teacher_mode: mode,
                    ..cfg.train.clone()
                };
                let sampler_cfg = SamplerConfig {
                    strategy,
                    ..cfg.sampler.clone()
                };
                let dir = seed_dir.join(format!("{mode}-{strategy}"));
                let outcome = run_training(
                    &seed_cfg,
                    &data,
                    &derived,
                    clusters.as_ref(),
                    validation.as_ref(),
                    &train_cfg,
                    &sampler_cfg,
                    &dir,
                )?;
                let (summary, run) = held_out(&outcome.best, &data, &seed_cfg)?;
                summary.write(&dir.join("eval"))?;
                write_run(
                    &run.truncated(RUN_DUMP_DEPTH),
                    &dir.join("run.txt"),
                    &format!("{mode}-{strategy}"),
                )?;
                log::info!("seed {seed} {mode}-{strategy}: nDCG {:.4}", summary.ndcg());
                Ok((summary, (outcome.best_step, outcome.steps)))
            })
            .collect::<Result<Vec<_>>>()?;
        for (slot, o) in per_config.iter_mut().zip(outcomes) {
            slot.push(o);
        }
    }

    let cells = configs
        .iter()
        .zip(per_config)
        .map(|(&(mode, strategy), runs)| {
            let (per_seed, steps) = runs.into_iter().unzip();
            AblationCell {
                mode,
                strategy,
                per_seed,
                steps,
            }
        })
        .collect();
    let report = AblationReport {
        seeds,
        untrained,
        cells,
    };
    write_text(&root.join("results.tsv"), &report.results())?;
    write_text(&root.join("table.tsv"), &report.table())?;
    if report.seeds.len() >= 2 {
        let best = report.best_cell();
        let robust = report.robustness(best)?;
        write_robustness_tsv(&robust, &root.join("robustness.tsv"))?;
        log::info!("best configuration {}: mean nDCG {:.4}", best.label(), best.mean_ndcg());
    } else {
        log::warn!("robustness needs at least two seeds; skipped");
    }
    if report.cells.is_empty() {
        return Err(Error::invalid("ablation produced no configurations"));
    }
    Ok(report)
}
