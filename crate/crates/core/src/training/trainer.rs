use std::path::Path;
use std::sync::Arc;

use crate::clustering::TopicClusters;
use crate::corpus::{Qrels, TextStore};
use crate::encoder::{StudentModel, TokenEmbeddingTable};
use crate::error::Result;
use crate::io_util::atomic_write;
use crate::sampler::{batch_queue, write_batch_dump, BatchSampler, BatchSource, SamplerConfig, TrainingPool};

use super::{
    adam_step, loss_and_grad_into, Adam, BatchPreparer, EarlyStopping, LossValue, TeacherMode, TrainConfig,
    ValidationSet,
};

/// Held-out queries used for checkpoint selection.
#[derive(Debug, Clone, Copy)]
pub struct ValidationData<'a> {
    pub set: &'a ValidationSet,
    pub queries: &'a TextStore,
    pub qrels: &'a Qrels,
}

pub struct TrainInputs<'a> {
    /// Starting weights.
    pub model: StudentModel,
    pub queries: &'a TextStore,
    pub passages: &'a TextStore,
    pub pool: Arc<TrainingPool>,
    pub clusters: Option<&'a TopicClusters>,
    pub sampler: SamplerConfig,
    pub validation: Option<ValidationData<'a>>,
    /// Receives `train_log.tsv`, `eval_log.tsv`, `best.ckpt` and
    /// `batches.tsv`.
    pub out_dir: Option<&'a Path>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Best validated checkpoint, or the final weights without validation.
    pub best: StudentModel,
    pub best_step: usize,
    pub best_metric: Option<f64>,
    pub steps: usize,
    pub stopped_early: bool,
    pub losses: Vec<(usize, LossValue)>,
    pub evals: Vec<(usize, f64)>,
}

struct Logs {
    losses: Vec<(usize, LossValue)>,
    evals: Vec<(usize, f64)>,
    dump: Vec<u8>,
}

impl Logs {
    fn write(&self, dir: &Path, dump: bool) -> Result<()> {
        atomic_write(&dir.join("train_log.tsv"), |w| {
            writeln!(w, "step\tL_pair\tL_InB\tL_DS")?;
            for (step, l) in &self.losses {
                match l.inbatch {
                    Some(inb) => writeln!(w, "{step}\t{:.8}\t{inb:.8}\t{:.8}", l.pair, l.total)?,
                    None => writeln!(w, "{step}\t{:.8}\t-\t{:.8}", l.pair, l.total)?,
                }
            }
            Ok(())
        })?;
        atomic_write(&dir.join("eval_log.tsv"), |w| {
            writeln!(w, "step\tnDCG@10")?;
            for (step, v) in &self.evals {
                writeln!(w, "{step}\t{v:.6}")?;
            }
            Ok(())
        })?;
        if dump {
            atomic_write(&dir.join("batches.tsv"), |w| {
                writeln!(w, "step\tstrategy\tcluster\tquery\tpos\tneg\tt_pos\tt_neg\tbin")?;
                w.write_all(&self.dump)
            })?;
        }
        Ok(())
    }
}

/// Runs the sample → loss → gradient → Adam loop, validating every
/// `eval_interval` steps and after the last step.
///
/// On a sampler or teacher error the logs so far and the best checkpoint
/// stay on disk and the error is returned.
pub fn train(config: &TrainConfig, inputs: TrainInputs<'_>) -> Result<TrainOutcome> {
    config.validate()?;
    let TrainInputs {
        mut model,
        queries,
        passages,
        pool,
        clusters,
        sampler,
        validation,
        out_dir,
    } = inputs;
    let objective = config.objective();
    let teacher = (config.teacher_mode != TeacherMode::Pairwise)
        .then(|| TokenEmbeddingTable::new(config.teacher_dim, config.teacher_seed));
    let mut preparer = BatchPreparer::new(queries, passages, model.d_feat(), teacher);
    let capacity = sampler.queue_capacity;
    let mut batches = batch_queue(BatchSampler::new(pool, clusters, sampler)?, capacity)?;

    let mut adam = Adam::new(model.weights().len());
    let mut grad = vec![0.0; model.weights().len()];
    let mut stopper = EarlyStopping::new(config.patience);
    let mut logs = Logs {
        losses: Vec::with_capacity(config.max_steps),
        evals: Vec::new(),
        dump: Vec::new(),
    };
    let mut best = model.clone();
    let mut best_step = 0;
    let mut stopped_early = false;
    let mut steps = 0;

    for step in 1..=config.max_steps {
        let mut run_step = || -> Result<LossValue> {
            let batch = batches.next_batch()?;
            if step <= config.dump_batches {
                write_batch_dump(&mut logs.dump, step, &batch).expect("writing to memory");
            }
            let prepared = preparer.prepare(&batch)?;
            let loss = loss_and_grad_into(&model, &prepared, &objective, &mut grad)?;
            adam_step(&mut model, &grad, &mut adam, config.learning_rate)?;
            Ok(loss)
        };
        let loss = match run_step() {
            Ok(loss) => loss,
            Err(e) => {
                log::error!("training aborted at step {step}: {e}");
                if let Some(dir) = out_dir {
                    logs.write(dir, config.dump_batches > 0)?;
                }
                return Err(e);
            }
        };
        logs.losses.push((step, loss));
        steps = step;

        let Some(val) = validation else { continue };
        if step % config.eval_interval != 0 && step != config.max_steps {
            continue;
        }
        let metric = val.set.evaluate(&model, val.queries, passages, val.qrels)?;
        logs.evals.push((step, metric));
        let decision = stopper.observe(metric);
        log::info!("step {step}: validation nDCG@10 {metric:.4} (loss {:.5})", loss.total);
        if decision.improved {
            best = model.clone();
            best_step = step;
            if let Some(dir) = out_dir {
                best.save(&dir.join("best.ckpt"))?;
            }
        }
        if decision.stop {
            log::info!("early stop at step {step}; best step {best_step}");
            stopped_early = true;
            break;
        }
    }

    if validation.is_none() {
        best = model;
        best_step = steps;
        if let Some(dir) = out_dir {
            best.save(&dir.join("best.ckpt"))?;
        }
    }
    if let Some(dir) = out_dir {
        logs.write(dir, config.dump_batches > 0)?;
    }
    Ok(TrainOutcome {
        best,
        best_step,
        best_metric: stopper.best(),
        steps,
        stopped_early,
        losses: logs.losses,
        evals: logs.evals,
    })
}
