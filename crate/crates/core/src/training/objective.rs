//! Batch preparation and the combined objective with its analytic
//! gradient with respect to the student weights.

use crate::corpus::TextStore;
use crate::encoder::{dot, EmbeddedText, EmbeddingCache, FeatureVector, StudentModel, TokenEmbeddingTable};
use crate::error::{Error, Result};
use crate::sampler::Batch;

use super::loss::{inbatch_list_term, inbatch_margin_mse_term, pairwise_term, ListKind, ScoreMatrices};
use super::{InBatchLoss, TeacherMode};

/// Which teachers supervise the student and how they are combined.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Objective {
    pub mode: TeacherMode,
    pub alpha: f64,
    pub inbatch_loss: InBatchLoss,
}

impl Objective {
    pub fn validate(&self) -> Result<()> {
        if !self.alpha.is_finite() || self.alpha < 0.0 {
            return Err(Error::invalid(format!(
                "alpha must be finite and non-negative, got {}",
                self.alpha
            )));
        }
        Ok(())
    }
}

/// Loss of one batch broken down by teacher.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossValue {
    /// Pairwise Margin-MSE; always computed, even when it is not optimized.
    pub pair: f64,
    /// In-batch term; absent when the in-batch teacher is not used.
    pub inbatch: Option<f64>,
    /// The optimized quantity.
    pub total: f64,
}

/// A batch turned into student features and teacher scores.
#[derive(Debug, Clone)]
pub struct PreparedBatch {
    pub queries: Vec<FeatureVector>,
    pub positives: Vec<FeatureVector>,
    pub negatives: Vec<FeatureVector>,
    /// Pairwise teacher `(t_pos, t_neg)` per tuple.
    pub pair_teacher: Vec<(f64, f64)>,
    /// Late-interaction teacher over all query/passage combinations.
    pub inbatch_teacher: Option<ScoreMatrices>,
}

impl PreparedBatch {
    pub fn len(&self) -> usize {
        self.queries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queries.is_empty()
    }
}

/// Resolves batch ids to texts and scores them with the in-batch teacher.
pub struct BatchPreparer<'a> {
    queries: &'a TextStore,
    passages: &'a TextStore,
    d_feat: usize,
    teacher: Option<EmbeddingCache>,
}

impl<'a> BatchPreparer<'a> {
    /// `teacher` is needed whenever the objective uses in-batch supervision.
    pub fn new(
        queries: &'a TextStore,
        passages: &'a TextStore,
        d_feat: usize,
        teacher: Option<TokenEmbeddingTable>,
    ) -> Self {
        Self {
            queries,
            passages,
            d_feat,
            teacher: teacher.map(EmbeddingCache::new),
        }
    }

    pub fn prepare(&mut self, batch: &Batch) -> Result<PreparedBatch> {
        if batch.is_empty() {
            return Err(Error::invalid("empty batch"));
        }
        let lookup = |store: &'a TextStore, id: &str| store.get(id).ok_or_else(|| Error::UnknownId(id.to_owned()));
        let mut q_text = Vec::with_capacity(batch.len());
        let mut p_text = Vec::with_capacity(batch.len());
        let mut n_text = Vec::with_capacity(batch.len());
        for t in &batch.tuples {
            q_text.push(lookup(self.queries, &t.query_id)?);
            p_text.push(lookup(self.passages, &t.pos_id)?);
            n_text.push(lookup(self.passages, &t.neg_id)?);
        }
        let feats = |texts: &[&crate::corpus::TextRecord]| {
            texts
                .iter()
                .map(|r| crate::encoder::hash_features(&r.tokens, self.d_feat))
                .collect::<Vec<_>>()
        };
        let inbatch_teacher = match self.teacher.as_mut() {
            Some(cache) => {
                let b = batch.len();
                let qs: Vec<_> = q_text.iter().map(|r| EmbeddedText::cached(&r.tokens, cache)).collect();
                let ps: Vec<_> = p_text.iter().map(|r| EmbeddedText::cached(&r.tokens, cache)).collect();
                let ns: Vec<_> = n_text.iter().map(|r| EmbeddedText::cached(&r.tokens, cache)).collect();
                let mut pos = Vec::with_capacity(b * b);
                let mut neg = Vec::with_capacity(b * b);
                for q in &qs {
                    pos.extend(ps.iter().map(|p| q.late_interaction(p)));
                    neg.extend(ns.iter().map(|n| q.late_interaction(n)));
                }
                Some(ScoreMatrices::new(b, pos, neg)?)
            }
            None => None,
        };
        Ok(PreparedBatch {
            queries: feats(&q_text),
            positives: feats(&p_text),
            negatives: feats(&n_text),
            pair_teacher: batch.tuples.iter().map(|t| (t.t_pos, t.t_neg)).collect(),
            inbatch_teacher,
        })
    }
}

fn encode_all(model: &StudentModel, feats: &[FeatureVector]) -> Result<Vec<Vec<f64>>> {
    feats.iter().map(|f| model.encode(f)).collect()
}

fn student_matrices(q: &[Vec<f64>], p: &[Vec<f64>], n: &[Vec<f64>]) -> Result<ScoreMatrices> {
    let b = q.len();
    let mut pos = Vec::with_capacity(b * b);
    let mut neg = Vec::with_capacity(b * b);
    for qi in q {
        pos.extend(p.iter().map(|pj| dot(qi, pj)));
        neg.extend(n.iter().map(|nj| dot(qi, nj)));
    }
    ScoreMatrices::new(b, pos, neg)
}

fn combine(
    student: &ScoreMatrices,
    batch: &PreparedBatch,
    objective: &Objective,
    mut grad: Option<&mut ScoreMatrices>,
) -> Result<LossValue> {
    let pair_weight = match objective.mode {
        TeacherMode::Pairwise | TeacherMode::Dual => 1.0,
        TeacherMode::InBatch => 0.0,
    };
    let inbatch_weight = match objective.mode {
        TeacherMode::Pairwise => 0.0,
        TeacherMode::InBatch => 1.0,
        TeacherMode::Dual => objective.alpha,
    };
    let pair = pairwise_term(
        student,
        &batch.pair_teacher,
        grad.as_deref_mut()
            .filter(|_| pair_weight > 0.0)
            .map(|g| (g, pair_weight)),
    )?;
    let inbatch = match (objective.mode, &batch.inbatch_teacher) {
        (TeacherMode::Pairwise, _) => None,
        (_, None) => return Err(Error::invalid("objective needs in-batch teacher scores")),
        (_, Some(teacher)) => {
            let g = grad.map(|g| (g, inbatch_weight));
            Some(match objective.inbatch_loss {
                InBatchLoss::MarginMse => inbatch_margin_mse_term(student, teacher, g)?,
                InBatchLoss::KlDiv => inbatch_list_term(student, teacher, ListKind::KlDiv, g)?,
                InBatchLoss::ListNet => inbatch_list_term(student, teacher, ListKind::ListNet, g)?,
            })
        }
    };
    let total = pair_weight * pair + inbatch_weight * inbatch.unwrap_or(0.0);
    Ok(LossValue { pair, inbatch, total })
}

/// Loss of `batch` under `model` without a gradient.
pub fn batch_loss(model: &StudentModel, batch: &PreparedBatch, objective: &Objective) -> Result<LossValue> {
    objective.validate()?;
    let q = encode_all(model, &batch.queries)?;
    let p = encode_all(model, &batch.positives)?;
    let n = encode_all(model, &batch.negatives)?;
    combine(&student_matrices(&q, &p, &n)?, batch, objective, None)
}

/// Loss and `∂L/∂W` written into `grad` (overwritten, length
/// `d_feat · d_emb`).
pub fn loss_and_grad_into(
    model: &StudentModel,
    batch: &PreparedBatch,
    objective: &Objective,
    grad: &mut [f64],
) -> Result<LossValue> {
    objective.validate()?;
    let d = model.d_emb();
    if grad.len() != model.weights().len() {
        return Err(Error::DimensionMismatch {
            expected: model.weights().len(),
            actual: grad.len(),
        });
    }
    let q = encode_all(model, &batch.queries)?;
    let p = encode_all(model, &batch.positives)?;
    let n = encode_all(model, &batch.negatives)?;
    let student = student_matrices(&q, &p, &n)?;
    let b = student.b();
    let mut ds = ScoreMatrices::zeros(b);
    let loss = combine(&student, batch, objective, Some(&mut ds))?;

    // Chain rule through score = ⟨e_q, e_p⟩ to the embeddings.
    let mut gq = vec![vec![0.0; d]; b];
    let mut gp = vec![vec![0.0; d]; b];
    let mut gn = vec![vec![0.0; d]; b];
    for i in 0..b {
        for j in 0..b {
            let (dp, dn) = (ds.pos(i, j), ds.neg(i, j));
            if dp != 0.0 {
                for k in 0..d {
                    gq[i][k] += dp * p[j][k];
                    gp[j][k] += dp * q[i][k];
                }
            }
            if dn != 0.0 {
                for k in 0..d {
                    gq[i][k] += dn * n[j][k];
                    gn[j][k] += dn * q[i][k];
                }
            }
        }
    }

    // e = Wᵀ u with u the normalized counts, so ∂L/∂W[f] = Σ u[f] · ∂L/∂e.
    grad.fill(0.0);
    for (feats, gs) in [(&batch.queries, &gq), (&batch.positives, &gp), (&batch.negatives, &gn)] {
        for (f, g) in feats.iter().zip(gs) {
            for (idx, w) in f.normalized() {
                for (dst, gk) in grad[idx * d..(idx + 1) * d].iter_mut().zip(g) {
                    *dst += w * gk;
                }
            }
        }
    }
    if grad.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("gradient"));
    }
    Ok(loss)
}

/// Allocating form of [`loss_and_grad_into`].
pub fn grad_dual_loss(
    model: &StudentModel,
    batch: &PreparedBatch,
    objective: &Objective,
) -> Result<(LossValue, Vec<f64>)> {
    let mut grad = vec![0.0; model.weights().len()];
    let loss = loss_and_grad_into(model, batch, objective, &mut grad)?;
    Ok((loss, grad))
}
