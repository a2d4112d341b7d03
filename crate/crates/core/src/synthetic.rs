//! Synthetic topical corpus: topics with subtopics, topic-correlated token
//! distributions, graded judgments and noisy pairwise teacher scores.
//!
//! Every passage belongs to one topic and one of its subtopics. Each query
//! is written from a target passage (grade 3); the other passages of the
//! target's subtopic are graded 1. Training triples pair the target with
//! a mix of easy negatives from other topics and hard negatives from the
//! same topic.

use std::path::Path;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::corpus::{Qrels, TextRecord, TextStore, TrainTriple, TrainingData, PASSAGE_CAP, QUERY_CAP};
use crate::error::{Error, Result};
use crate::io_util::atomic_write;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub topics: usize,
    pub subtopics_per_topic: usize,
    pub passages_per_topic: usize,
    pub train_queries_per_topic: usize,
    pub val_queries_per_topic: usize,
    pub test_queries_per_topic: usize,
    pub general_vocab: usize,
    pub topic_vocab: usize,
    pub subtopic_vocab: usize,
    pub passage_len: usize,
    /// Probability that a passage word comes from the general vocabulary.
    pub general_share: f64,
    /// Probability that a passage word comes from its subtopic vocabulary;
    /// the remainder comes from the topic vocabulary.
    pub subtopic_share: f64,
    pub query_len: usize,
    /// Query words drawn from the target's subtopic vocabulary rather than
    /// from the target passage itself.
    pub query_subtopic_words: usize,
    /// Training pairs per query.
    pub pairs_per_query: usize,
    /// Share of negatives drawn from the query's own topic.
    pub hard_negative_fraction: f64,
    /// Standard deviation of the pairwise teacher's noise.
    pub teacher_noise: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            topics: 50,
            subtopics_per_topic: 4,
            passages_per_topic: 80,
            train_queries_per_topic: 40,
            val_queries_per_topic: 2,
            test_queries_per_topic: 4,
            general_vocab: 400,
            topic_vocab: 40,
            subtopic_vocab: 12,
            passage_len: 20,
            general_share: 0.35,
            subtopic_share: 0.25,
            query_len: 6,
            query_subtopic_words: 0,
            pairs_per_query: 8,
            hard_negative_fraction: 0.25,
            teacher_noise: 0.5,
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("topics", self.topics),
            ("subtopics_per_topic", self.subtopics_per_topic),
            ("general_vocab", self.general_vocab),
            ("topic_vocab", self.topic_vocab),
            ("subtopic_vocab", self.subtopic_vocab),
            ("passage_len", self.passage_len),
            ("query_len", self.query_len),
            ("pairs_per_query", self.pairs_per_query),
            ("train_queries_per_topic", self.train_queries_per_topic),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("synthetic.{name} must be positive")));
        }
        if self.topics < 2 {
            return Err(Error::Config("synthetic.topics must be at least 2".into()));
        }
        if self.passages_per_topic < 2 * self.subtopics_per_topic {
            return Err(Error::Config(
                "synthetic.passages_per_topic must cover two passages per subtopic".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.hard_negative_fraction) {
            return Err(Error::Config(
                "synthetic.hard_negative_fraction must lie in [0, 1]".into(),
            ));
        }
        let shares = [self.general_share, self.subtopic_share];
        if shares.iter().any(|s| !(0.0..=1.0).contains(s)) || self.general_share + self.subtopic_share > 1.0 {
            return Err(Error::Config(
                "synthetic.general_share and synthetic.subtopic_share must lie in [0, 1] and sum to at most 1".into(),
            ));
        }
        if self.teacher_noise.is_nan() || self.teacher_noise < 0.0 {
            return Err(Error::Config("synthetic.teacher_noise must be non-negative".into()));
        }
        if self.query_subtopic_words + 1 > self.query_len {
            return Err(Error::Config(
                "synthetic.query_subtopic_words must leave room for a target word".into(),
            ));
        }
        if self.passage_len > PASSAGE_CAP || self.query_len > QUERY_CAP {
            return Err(Error::Config("synthetic text lengths exceed the token caps".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub passages: TextStore,
    pub train_queries: TextStore,
    pub val_queries: TextStore,
    pub test_queries: TextStore,
    /// Judgments for every query split.
    pub qrels: Qrels,
    pub training: TrainingData,
    /// Topic of each training query, in store order.
    pub train_topics: Vec<usize>,
}

struct Passage {
    topic: usize,
    subtopic: usize,
    tokens: Vec<String>,
}

struct Generator<'a> {
    cfg: &'a SyntheticConfig,
    rng: ChaCha8Rng,
}

impl Generator<'_> {
    /// Zipf-like skew towards low word ids.
    fn general_word(&mut self) -> String {
        let r: f64 = self.rng.random();
        format!("g{}", ((r * r) * self.cfg.general_vocab as f64) as usize)
    }

    fn topic_word(&mut self, topic: usize) -> String {
        format!("t{topic}w{}", self.rng.random_range(0..self.cfg.topic_vocab))
    }

    fn subtopic_word(&mut self, topic: usize, subtopic: usize) -> String {
        format!(
            "t{topic}s{subtopic}w{}",
            self.rng.random_range(0..self.cfg.subtopic_vocab)
        )
    }

    fn passage(&mut self, id: usize, topic: usize, subtopic: usize) -> Passage {
        let mut tokens: Vec<String> = (0..self.cfg.passage_len.saturating_sub(2))
            .map(|_| {
                let u: f64 = self.rng.random();
                if u < self.cfg.general_share {
                    self.general_word()
                } else if u < self.cfg.general_share + self.cfg.subtopic_share {
                    self.subtopic_word(topic, subtopic)
                } else {
                    self.topic_word(topic)
                }
            })
            .collect();
        // Two words unique to this passage.
        for k in 0..self.cfg.passage_len.min(2) {
            let at = self.rng.random_range(0..=tokens.len());
            tokens.insert(at, format!("u{id}x{k}"));
        }
        Passage {
            topic,
            subtopic,
            tokens,
        }
    }

    /// Mostly words of the target passage, plus subtopic words, an unseen
    /// topic word and a general word.
    fn query(&mut self, target: &Passage) -> Vec<String> {
        let content: Vec<&String> = target.tokens.iter().filter(|t| !t.starts_with('g')).collect();
        let n = self.cfg.query_len;
        let from_target = n.saturating_sub(2 + self.cfg.query_subtopic_words).max(1);
        let mut tokens: Vec<String> = (0..from_target)
            .map(|_| (*content.choose(&mut self.rng).expect("passages have content words")).clone())
            .collect();
        for _ in 0..self.cfg.query_subtopic_words {
            tokens.push(self.subtopic_word(target.topic, target.subtopic));
        }
        if n >= 2 {
            tokens.push(self.topic_word(target.topic));
        }
        if n >= 3 {
            tokens.push(self.general_word());
        }
        tokens
    }
}

fn overlap(q: &[String], p: &[String]) -> usize {
    q.iter().filter(|t| p.contains(t)).count()
}

/// Deterministic in the config (including its seed).
pub fn generate(cfg: &SyntheticConfig) -> Result<SyntheticCorpus> {
    cfg.validate()?;
    let mut g = Generator {
        cfg,
        rng: ChaCha8Rng::seed_from_u64(cfg.seed),
    };
    let mut passages = Vec::with_capacity(cfg.topics * cfg.passages_per_topic);
    for topic in 0..cfg.topics {
        for j in 0..cfg.passages_per_topic {
            let id = passages.len();
            passages.push(g.passage(id, topic, j % cfg.subtopics_per_topic));
        }
    }
    let noise = Normal::new(0.0, cfg.teacher_noise).map_err(|e| Error::Config(e.to_string()))?;
    let grade = |target: usize, p: usize| -> u32 {
        if p == target {
            3
        } else if passages[p].topic == passages[target].topic && passages[p].subtopic == passages[target].subtopic {
            1
        } else {
            0
        }
    };

    let mut qrels = Qrels::new();
    let mut training = TrainingData::default();
    let mut splits: [Vec<TextRecord>; 3] = Default::default();
    let mut train_topics = Vec::new();
    let per_split = [
        cfg.train_queries_per_topic,
        cfg.val_queries_per_topic,
        cfg.test_queries_per_topic,
    ];
    let prefixes = ["q", "v", "e"];
    for topic in 0..cfg.topics {
        let first = topic * cfg.passages_per_topic;
        for (split, (&count, prefix)) in per_split.iter().zip(prefixes).enumerate() {
            for _ in 0..count {
                let target = first + g.rng.random_range(0..cfg.passages_per_topic);
                let tokens = g.query(&passages[target]);
                let qid = format!("{prefix}{}", splits[split].len());
                for p in first..first + cfg.passages_per_topic {
                    let gr = grade(target, p);
                    if gr > 0 {
                        qrels.insert(&qid, &format!("p{p}"), gr);
                    }
                }
                if split == 0 {
                    let teacher = |p: usize, rng: &mut ChaCha8Rng| {
                        let base = match grade(target, p) {
                            3 => 8.0,
                            1 => 4.0,
                            _ if passages[p].topic == topic => 2.0,
                            _ => 0.0,
                        };
                        base + 0.3 * overlap(&tokens, &passages[p].tokens) as f64 + noise.sample(rng)
                    };
                    let t_pos = teacher(target, &mut g.rng);
                    let mut used = std::collections::HashSet::new();
                    while used.len() < cfg.pairs_per_query {
                        let neg = if g.rng.random::<f64>() < cfg.hard_negative_fraction {
                            first + g.rng.random_range(0..cfg.passages_per_topic)
                        } else {
                            let other = (topic + g.rng.random_range(1..cfg.topics)) % cfg.topics;
                            other * cfg.passages_per_topic + g.rng.random_range(0..cfg.passages_per_topic)
                        };
                        if neg == target || !used.insert(neg) {
                            continue;
                        }
                        let t_neg = teacher(neg, &mut g.rng);
                        training.push(
                            TrainTriple {
                                query_id: qid.clone(),
                                pos_id: format!("p{target}"),
                                neg_id: format!("p{neg}"),
                            },
                            t_pos,
                            t_neg,
                        )?;
                    }
                    train_topics.push(topic);
                }
                splits[split].push(TextRecord { id: qid, tokens });
            }
        }
    }

    let passage_store = TextStore::from_records(
        passages.into_iter().enumerate().map(|(i, p)| TextRecord {
            id: format!("p{i}"),
            tokens: p.tokens,
        }),
        PASSAGE_CAP,
    )?;
    let [train, val, test] = splits;
    Ok(SyntheticCorpus {
        passages: passage_store,
        train_queries: TextStore::from_records(train, QUERY_CAP)?,
        val_queries: TextStore::from_records(val, QUERY_CAP)?,
        test_queries: TextStore::from_records(test, QUERY_CAP)?,
        qrels,
        training,
        train_topics,
    })
}

fn write_store(store: &TextStore, path: &Path) -> Result<()> {
    atomic_write(path, |w| {
        for r in store.iter() {
            writeln!(w, "{}\t{}", r.id, r.tokens.join(" "))?;
        }
        Ok(())
    })
}

/// File names written by [`SyntheticCorpus::write`].
pub mod files {
    pub const COLLECTION: &str = "collection.tsv";
    pub const TRAIN_QUERIES: &str = "queries.train.tsv";
    pub const VAL_QUERIES: &str = "queries.val.tsv";
    pub const TEST_QUERIES: &str = "queries.test.tsv";
    pub const QRELS: &str = "qrels.txt";
    pub const TRIPLES: &str = "triples.tsv";
    pub const SCORES: &str = "teacher_scores.tsv";
}

impl SyntheticCorpus {
    /// Writes the corpus in the standard input formats under `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        write_store(&self.passages, &dir.join(files::COLLECTION))?;
        write_store(&self.train_queries, &dir.join(files::TRAIN_QUERIES))?;
        write_store(&self.val_queries, &dir.join(files::VAL_QUERIES))?;
        write_store(&self.test_queries, &dir.join(files::TEST_QUERIES))?;
        self.qrels.write(&dir.join(files::QRELS))?;
        self.training.write(&dir.join(files::TRIPLES), &dir.join(files::SCORES))
    }
}
