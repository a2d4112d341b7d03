//! Approximate-retrieval validation: a fixed candidate pool per query,
//! re-ranked by the model under training.

use std::collections::{BTreeSet, HashSet};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::corpus::{Qrels, Run, TextStore};
use crate::encoder::{dot, StudentModel};
use crate::error::{Error, Result};
use crate::evaluation::ndcg_at;
use crate::index::DenseIndex;
use crate::io_util::{atomic_write, open_lines};

/// Cutoff of the validation metric.
pub const VALIDATION_CUTOFF: usize = 10;

/// Candidate passages per validation query.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ValidationSet {
    pools: Vec<(String, Vec<String>)>,
}

impl ValidationSet {
    pub fn from_pools(pools: Vec<(String, Vec<String>)>) -> Self {
        Self { pools }
    }

    pub fn pools(&self) -> &[(String, Vec<String>)] {
        &self.pools
    }

    pub fn len(&self) -> usize {
        self.pools.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pools.is_empty()
    }

    pub fn query_ids(&self) -> impl Iterator<Item = &str> {
        self.pools.iter().map(|(q, _)| q.as_str())
    }

    /// `query_id<TAB>passage_id` per candidate.
    pub fn save(&self, path: &Path) -> Result<()> {
        atomic_write(path, |w| {
            for (q, pool) in &self.pools {
                for p in pool {
                    writeln!(w, "{q}\t{p}")?;
                }
            }
            Ok(())
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut pools: Vec<(String, Vec<String>)> = Vec::new();
        for (line_no, line) in open_lines(path)? {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let (q, p) = line
                .split_once('\t')
                .ok_or_else(|| Error::parse(path, line_no, "expected query_id<TAB>passage_id"))?;
            match pools.last_mut() {
                Some((last, pool)) if last == q => pool.push(p.to_owned()),
                _ => {
                    if pools.iter().any(|(x, _)| x == q) {
                        return Err(Error::parse(path, line_no, format!("query `{q}` is not contiguous")));
                    }
                    pools.push((q.to_owned(), vec![p.to_owned()]));
                }
            }
        }
        Ok(Self { pools })
    }

    /// Mean nDCG@10 of `model` re-ranking each pool.
    pub fn evaluate(
        &self,
        model: &StudentModel,
        queries: &TextStore,
        passages: &TextStore,
        qrels: &Qrels,
    ) -> Result<f64> {
        let rankings = self
            .pools
            .par_iter()
            .map(|(q, pool)| {
                let query = queries.get(q).ok_or_else(|| Error::UnknownId(q.clone()))?;
                let qv = model.encode_tokens(&query.tokens)?;
                let scored = pool
                    .iter()
                    .map(|p| {
                        let passage = passages.get(p).ok_or_else(|| Error::UnknownId(p.clone()))?;
                        Ok((p.clone(), dot(&qv, &model.encode_tokens(&passage.tokens)?)))
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok((q.as_str(), scored))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut run = Run::new();
        for (q, scored) in rankings {
            run.insert(q, scored)?;
        }
        Ok(ndcg_at(&run, qrels, VALIDATION_CUTOFF)?.mean())
    }
}

/// How validation queries and pools are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ValidationParams {
    pub sample_size: usize,
    pub top_k: usize,
    pub seed: u64,
}

impl Default for ValidationParams {
    fn default() -> Self {
        Self {
            sample_size: 3200,
            top_k: 100,
            seed: 0,
        }
    }
}

/// Samples `sample_size` judged queries and pools the baseline's `top_k`
/// hits with every judged-relevant passage.
///
/// `excluded` lists evaluation query ids; any overlap with `queries` is an
/// error.
pub fn build_validation_set(
    baseline: &StudentModel,
    index: &DenseIndex,
    queries: &TextStore,
    qrels: &Qrels,
    excluded: &HashSet<String>,
    params: &ValidationParams,
) -> Result<ValidationSet> {
    let ValidationParams {
        sample_size,
        top_k,
        seed,
    } = *params;
    if index.model_checksum() != baseline.checksum() {
        return Err(Error::invalid("validation index was not built with the baseline model"));
    }
    if let Some(q) = queries.iter().find(|q| excluded.contains(&q.id)) {
        return Err(Error::invalid(format!(
            "validation query `{}` is also an evaluation query",
            q.id
        )));
    }
    let candidates: Vec<usize> = queries
        .iter()
        .enumerate()
        .filter(|(_, q)| qrels.relevant(&q.id, 1).next().is_some())
        .map(|(i, _)| i)
        .collect();
    if candidates.is_empty() {
        return Err(Error::invalid("no validation query has a judged-relevant passage"));
    }
    let mut chosen: Vec<usize> = if sample_size >= candidates.len() {
        candidates
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rand::seq::index::sample(&mut rng, candidates.len(), sample_size)
            .into_iter()
            .map(|i| candidates[i])
            .collect()
    };
    chosen.sort_unstable();
    let records = queries.records();
    let pools = chosen
        .into_par_iter()
        .map(|i| {
            let q = &records[i];
            let hits = index.search(&baseline.encode_tokens(&q.tokens)?, top_k)?;
            let mut seen: BTreeSet<&str> = hits.iter().map(|h| h.passage_id.as_str()).collect();
            let mut pool: Vec<String> = hits.iter().map(|h| h.passage_id.clone()).collect();
            for rel in qrels.relevant(&q.id, 1) {
                if seen.insert(rel) {
                    pool.push(rel.to_owned());
                }
            }
            Ok((q.id.clone(), pool))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ValidationSet { pools })
}
