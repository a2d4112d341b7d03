//! Training batch composition: random, topic-aware (TAS) and topic-aware
//! with balanced margin sampling (TAS-Balanced).
//!
//! TAS draws `n` clusters and `⌊b/n⌋` queries from each, so in-batch
//! negatives come from topically related queries. TAS-Balanced additionally
//! splits every query's passage pairs into `h` equal-width teacher-margin
//! bins and draws a non-empty bin uniformly before drawing a pair, which
//! evens out easy (high-margin) and hard (low-margin) pairs.

mod bins;
mod queue;
mod strategies;

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::clustering::TopicClusters;
use crate::corpus::TrainingData;
use crate::error::{Error, Result};

pub use bins::{compute_margin_bins, BinnedPairs};
pub use queue::{batch_queue, BatchQueue};
pub use strategies::{
    sample_random_batch, sample_tas_balanced_batch, sample_tas_batch, write_batch_dump, MAX_CLUSTER_ATTEMPTS,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    Random,
    Tas,
    TasBalanced,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [Strategy::Random, Strategy::Tas, Strategy::TasBalanced];

    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::Random => "random",
            Strategy::Tas => "tas",
            Strategy::TasBalanced => "tas-balanced",
        }
    }

    pub fn needs_clusters(self) -> bool {
        !matches!(self, Strategy::Random)
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(Strategy::Random),
            "tas" => Ok(Strategy::Tas),
            "tas-balanced" | "tas_balanced" => Ok(Strategy::TasBalanced),
            other => Err(Error::invalid(format!(
                "unknown sampling strategy `{other}` (expected random, tas or tas-balanced)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerConfig {
    pub strategy: Strategy,
    /// Batch size `b`.
    pub batch_size: usize,
    /// Clusters per batch `n`.
    pub clusters_per_batch: usize,
    /// Margin bins per query `h`.
    pub margin_bins: usize,
    pub seed: u64,
    pub queue_capacity: usize,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            strategy: Strategy::TasBalanced,
            batch_size: 32,
            clusters_per_batch: 1,
            margin_bins: 10,
            seed: 0,
            queue_capacity: 8,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be at least 1"));
        }
        if self.clusters_per_batch == 0 || self.clusters_per_batch > self.batch_size {
            return Err(Error::invalid("clusters per batch must be in [1, batch size]"));
        }
        if self.margin_bins == 0 {
            return Err(Error::invalid("margin bins must be at least 1"));
        }
        if self.queue_capacity == 0 {
            return Err(Error::invalid("queue capacity must be at least 1"));
        }
        Ok(())
    }
}

/// A `(positive, negative)` passage pair with its pairwise teacher scores.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredPair {
    pub pos_id: String,
    pub neg_id: String,
    pub t_pos: f64,
    pub t_neg: f64,
}

impl ScoredPair {
    pub fn margin(&self) -> f64 {
        self.t_pos - self.t_neg
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryPairs {
    pub query_id: String,
    pub pairs: Vec<ScoredPair>,
}

/// All training queries with their scored pairs, in first-seen order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingPool {
    queries: Vec<QueryPairs>,
    index: HashMap<String, usize>,
}

impl TrainingPool {
    /// Groups triples by query. Repeated triples collapse to one pair.
    pub fn from_training_data(data: &TrainingData) -> Result<Self> {
        let mut pool = TrainingPool::default();
        let mut seen: HashSet<(&str, &str, &str)> = HashSet::new();
        for t in &data.triples {
            if !seen.insert((&t.query_id, &t.pos_id, &t.neg_id)) {
                continue;
            }
            let pair = ScoredPair {
                pos_id: t.pos_id.clone(),
                neg_id: t.neg_id.clone(),
                t_pos: data.scores.score(&t.query_id, &t.pos_id)?,
                t_neg: data.scores.score(&t.query_id, &t.neg_id)?,
            };
            let slot = *pool.index.entry(t.query_id.clone()).or_insert_with(|| {
                pool.queries.push(QueryPairs {
                    query_id: t.query_id.clone(),
                    pairs: Vec::new(),
                });
                pool.queries.len() - 1
            });
            pool.queries[slot].pairs.push(pair);
        }
        Ok(pool)
    }

    pub fn from_queries(queries: Vec<QueryPairs>) -> Result<Self> {
        let mut index = HashMap::with_capacity(queries.len());
        for (i, q) in queries.iter().enumerate() {
            if q.pairs.is_empty() {
                return Err(Error::invalid(format!("query `{}` has no pairs", q.query_id)));
            }
            if index.insert(q.query_id.clone(), i).is_some() {
                return Err(Error::DuplicateId(q.query_id.clone()));
            }
        }
        Ok(Self { queries, index })
    }

    pub fn len(&self) -> usize {
        self.queries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queries.is_empty()
    }

    pub fn queries(&self) -> &[QueryPairs] {
        &self.queries
    }

    pub fn get(&self, i: usize) -> &QueryPairs {
        &self.queries[i]
    }

    pub fn position(&self, query_id: &str) -> Option<usize> {
        self.index.get(query_id).copied()
    }

    pub fn query_ids(&self) -> impl Iterator<Item = &str> {
        self.queries.iter().map(|q| q.query_id.as_str())
    }
}

/// Cluster membership expressed as pool indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClusterIndex {
    clusters: Vec<Vec<usize>>,
}

impl ClusterIndex {
    /// Maps cluster members onto the pool. Clustered queries without
    /// training pairs are dropped.
    pub fn new(clusters: &TopicClusters, pool: &TrainingPool) -> Self {
        let mut dropped = 0usize;
        let clusters = (0..clusters.k())
            .map(|c| {
                clusters
                    .members(c)
                    .filter_map(|q| {
                        let p = pool.position(q);
                        dropped += usize::from(p.is_none());
                        p
                    })
                    .collect()
            })
            .collect();
        if dropped > 0 {
            log::warn!("{dropped} clustered queries have no training pairs and will not be sampled");
        }
        Self { clusters }
    }

    pub fn from_lists(clusters: Vec<Vec<usize>>) -> Self {
        Self { clusters }
    }

    pub fn k(&self) -> usize {
        self.clusters.len()
    }

    pub fn members(&self, c: usize) -> &[usize] {
        &self.clusters[c]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchTuple {
    pub query_id: String,
    pub pos_id: String,
    pub neg_id: String,
    pub t_pos: f64,
    pub t_neg: f64,
    /// Cluster the query was drawn from (TAS strategies).
    pub cluster: Option<usize>,
    /// Margin bin the pair was drawn from (TAS-Balanced).
    pub bin: Option<usize>,
}

/// The unit of one optimizer step.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub strategy: Strategy,
    pub tuples: Vec<BatchTuple>,
    /// Distinct clusters used, in draw order.
    pub clusters: Vec<usize>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.tuples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tuples.is_empty()
    }
}

/// Something that yields an endless stream of batches.
pub trait BatchSource {
    fn next_batch(&mut self) -> Result<Batch>;
}

/// Single-threaded sampler; also the producer behind [`BatchQueue`].
#[derive(Debug, Clone)]
pub struct BatchSampler {
    pool: Arc<TrainingPool>,
    clusters: Option<ClusterIndex>,
    binned: Vec<BinnedPairs>,
    config: SamplerConfig,
    rng: ChaCha8Rng,
}

impl BatchSampler {
    pub fn new(pool: Arc<TrainingPool>, clusters: Option<&TopicClusters>, config: SamplerConfig) -> Result<Self> {
        config.validate()?;
        if pool.is_empty() {
            return Err(Error::invalid("training pool is empty"));
        }
        let clusters = match (config.strategy.needs_clusters(), clusters) {
            (true, None) => {
                return Err(Error::invalid(format!(
                    "strategy `{}` needs topic clusters",
                    config.strategy
                )))
            }
            (true, Some(c)) => Some(ClusterIndex::new(c, &pool)),
            (false, _) => None,
        };
        let binned = if config.strategy == Strategy::TasBalanced {
            pool.queries()
                .iter()
                .map(|q| compute_margin_bins(q, config.margin_bins))
                .collect()
        } else {
            Vec::new()
        };
        let rng = ChaCha8Rng::seed_from_u64(config.seed);
        Ok(Self {
            pool,
            clusters,
            binned,
            config,
            rng,
        })
    }

    pub fn config(&self) -> &SamplerConfig {
        &self.config
    }

    pub fn pool(&self) -> &TrainingPool {
        &self.pool
    }
}

impl BatchSource for BatchSampler {
    fn next_batch(&mut self) -> Result<Batch> {
        let b = self.config.batch_size;
        let n = self.config.clusters_per_batch;
        match self.config.strategy {
            Strategy::Random => sample_random_batch(&self.pool, b, &mut self.rng),
            Strategy::Tas => sample_tas_batch(&self.pool, self.clusters.as_ref().unwrap(), b, n, &mut self.rng),
            Strategy::TasBalanced => sample_tas_balanced_batch(
                &self.pool,
                self.clusters.as_ref().unwrap(),
                &self.binned,
                b,
                n,
                &mut self.rng,
            ),
        }
    }
}
