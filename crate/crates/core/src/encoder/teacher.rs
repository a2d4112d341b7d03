use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use std::collections::HashMap;

use super::{dot, Scorer};
use crate::corpus::{TeacherScoreStore, TextRecord};
use crate::error::Result;
use crate::io_util::fnv1a64;

pub const DEFAULT_D_TOK: usize = 32;

const SEED_MIX: u64 = 0x9e37_79b9_7f4a_7c15;

/// Frozen token embeddings for the late-interaction teacher.
///
/// A token's vector is a pure function of `(seed, fnv1a64(token))`: a
/// standard-normal draw from a generator seeded by the mixed pair, scaled
/// to unit length. Nothing is stored, so the table covers any vocabulary.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TokenEmbeddingTable {
    seed: u64,
    dim: usize,
}

impl TokenEmbeddingTable {
    pub fn new(dim: usize, seed: u64) -> Self {
        assert!(dim >= 1, "token embedding dimension must be positive");
        Self { seed, dim }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn embed(&self, token: &str) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.embed_into(token, &mut out);
        out
    }

    pub fn embed_into(&self, token: &str, out: &mut [f64]) {
        let key = fnv1a64(token.as_bytes()) ^ self.seed.wrapping_mul(SEED_MIX);
        let mut rng = ChaCha8Rng::seed_from_u64(key);
        loop {
            for o in out.iter_mut() {
                *o = StandardNormal.sample(&mut rng);
            }
            let norm = dot(out, out).sqrt();
            if norm > 1e-12 {
                out.iter_mut().for_each(|o| *o /= norm);
                return;
            }
        }
    }
}

/// A token sequence embedded with a [`TokenEmbeddingTable`]: one row per
/// distinct token plus its multiplicity.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddedText {
    dim: usize,
    rows: Vec<f64>,
    /// Multiplicity of each row; a query term counts once per occurrence.
    weights: Vec<f64>,
}

impl EmbeddedText {
    fn build<S: AsRef<str>>(tokens: &[S], table: &TokenEmbeddingTable, cache: Option<&mut EmbeddingCache>) -> Self {
        let mut order: Vec<&str> = Vec::new();
        let mut mult: HashMap<&str, usize> = HashMap::new();
        for t in tokens {
            let t = t.as_ref();
            let c = mult.entry(t).or_insert(0);
            if *c == 0 {
                order.push(t);
            }
            *c += 1;
        }
        let dim = table.dim();
        let mut rows = vec![0.0; order.len() * dim];
        match cache {
            Some(cache) => {
                for (i, t) in order.iter().enumerate() {
                    rows[i * dim..(i + 1) * dim].copy_from_slice(cache.get(t));
                }
            }
            None => {
                for (i, t) in order.iter().enumerate() {
                    table.embed_into(t, &mut rows[i * dim..(i + 1) * dim]);
                }
            }
        }
        let weights = order.iter().map(|t| mult[t] as f64).collect();
        Self { dim, rows, weights }
    }

    /// Embeds a query: every occurrence of a term contributes its own max.
    pub fn for_query<S: AsRef<str>>(tokens: &[S], table: &TokenEmbeddingTable) -> Self {
        Self::build(tokens, table, None)
    }

    /// Embeds a passage; only the distinct tokens matter for max-pooling.
    pub fn for_passage<S: AsRef<str>>(tokens: &[S], table: &TokenEmbeddingTable) -> Self {
        Self::build(tokens, table, None)
    }

    pub(crate) fn cached<S: AsRef<str>>(tokens: &[S], cache: &mut EmbeddingCache) -> Self {
        let table = cache.table;
        Self::build(tokens, &table, Some(cache))
    }

    fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.rows.chunks_exact(self.dim)
    }

    /// `Σ_q max_p ⟨q, p⟩`, summed over query term occurrences.
    pub fn late_interaction(&self, passage: &EmbeddedText) -> f64 {
        self.rows()
            .zip(&self.weights)
            .map(|(q, w)| {
                let best = passage.rows().map(|p| dot(q, p)).fold(f64::NEG_INFINITY, f64::max);
                w * best
            })
            .sum()
    }
}

/// Memoizes token embeddings for a fixed table.
#[derive(Debug, Clone)]
pub(crate) struct EmbeddingCache {
    table: TokenEmbeddingTable,
    vectors: HashMap<String, Vec<f64>>,
}

impl EmbeddingCache {
    pub(crate) fn new(table: TokenEmbeddingTable) -> Self {
        Self {
            table,
            vectors: HashMap::new(),
        }
    }

    fn get(&mut self, token: &str) -> &[f64] {
        if !self.vectors.contains_key(token) {
            self.vectors.insert(token.to_owned(), self.table.embed(token));
        }
        &self.vectors[token]
    }
}

/// Late-interaction score: for each query token, the best dot product with
/// any passage token, summed over query tokens.
pub fn teacher_late_interaction<S: AsRef<str>>(q_tokens: &[S], p_tokens: &[S], table: &TokenEmbeddingTable) -> f64 {
    let q = EmbeddedText::for_query(q_tokens, table);
    let p = EmbeddedText::for_passage(p_tokens, table);
    q.late_interaction(&p)
}

/// In-batch teacher over frozen token embeddings.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LateInteractionTeacher {
    pub table: TokenEmbeddingTable,
}

impl LateInteractionTeacher {
    pub fn new(table: TokenEmbeddingTable) -> Self {
        Self { table }
    }
}

impl Scorer for LateInteractionTeacher {
    fn score(&self, query: &TextRecord, passage: &TextRecord) -> Result<f64> {
        Ok(teacher_late_interaction(&query.tokens, &passage.tokens, &self.table))
    }
}

/// Pairwise teacher backed by precomputed scores.
#[derive(Debug, Clone, Copy)]
pub struct PairwiseTeacher<'a> {
    pub store: &'a TeacherScoreStore,
}

impl<'a> PairwiseTeacher<'a> {
    pub fn new(store: &'a TeacherScoreStore) -> Self {
        Self { store }
    }

    pub fn lookup(&self, q_id: &str, p_id: &str) -> Result<f64> {
        self.store.score(q_id, p_id)
    }
}

impl Scorer for PairwiseTeacher<'_> {
    fn score(&self, query: &TextRecord, passage: &TextRecord) -> Result<f64> {
        self.lookup(&query.id, &passage.id)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;
    use rand::Rng;

    fn table() -> TokenEmbeddingTable {
        TokenEmbeddingTable::new(DEFAULT_D_TOK, 42)
    }

    #[test]
    fn embeddings_are_unit_and_deterministic() {
        let t = table();
        for tok in ["a", "cat", "ünïcode", "42"] {
            let v = t.embed(tok);
            assert!((dot(&v, &v).sqrt() - 1.0).abs() < 1e-6);
            assert_eq!(v, t.embed(tok));
        }
        assert_ne!(t.embed("a"), TokenEmbeddingTable::new(DEFAULT_D_TOK, 43).embed("a"));
    }

    #[test]
    fn identical_sequences_score_their_length() {
        let toks = ["the", "quick", "brown", "fox", "jumps"];
        let s = teacher_late_interaction(&toks, &toks, &table());
        assert!((s - 5.0).abs() < 1e-9, "{s}");
        let one = teacher_late_interaction(&["x"], &["x"], &table());
        assert!((one - 1.0).abs() < 1e-6);
    }

    fn naive(q: &[String], p: &[String], t: &TokenEmbeddingTable) -> f64 {
        let mut total = 0.0;
        for qt in q {
            let qv = t.embed(qt);
            let mut best = f64::NEG_INFINITY;
            for pt in p {
                let pv = t.embed(pt);
                let mut d = 0.0;
                for k in 0..qv.len() {
                    d += qv[k] * pv[k];
                }
                if d > best {
                    best = d;
                }
            }
            total += best;
        }
        total
    }

    #[test]
    fn matches_double_loop_oracle() {
        let t = table();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let vocab: Vec<String> = (0..40).map(|i| format!("w{i}")).collect();
        for _ in 0..100 {
            let q: Vec<String> = (0..rng.random_range(1..8))
                .map(|_| vocab[rng.random_range(0..40)].clone())
                .collect();
            let p: Vec<String> = (0..rng.random_range(1..30))
                .map(|_| vocab[rng.random_range(0..40)].clone())
                .collect();
            let fast = teacher_late_interaction(&q, &p, &t);
            assert!((fast - naive(&q, &p, &t)).abs() < 1e-12);
            assert!(fast <= q.len() as f64 + 1e-9);
        }
    }

    #[test]
    fn bounded_and_tight_only_on_full_cover() {
        let t = table();
        let q = ["alpha", "beta"];
        assert!((teacher_late_interaction(&q, &["beta", "gamma", "alpha"], &t) - 2.0).abs() < 1e-9);
        assert!(teacher_late_interaction(&q, &["beta", "gamma"], &t) < 2.0 - 1e-6);
    }

    #[test]
    fn pairwise_lookup() {
        let mut store = TeacherScoreStore::new();
        store.insert("q", "p", 9.5).unwrap();
        let teacher = PairwiseTeacher::new(&store);
        assert_eq!(teacher.lookup("q", "p").unwrap(), 9.5);
        assert_eq!(teacher.lookup("q", "p").unwrap(), 9.5);
        assert!(matches!(
            teacher.lookup("q", "x"),
            Err(Error::MissingTeacherScore { .. })
        ));
    }

    #[test]
    fn cached_embedding_matches_direct() {
        let t = table();
        let mut cache = EmbeddingCache::new(t);
        let q = EmbeddedText::cached(&["a", "b", "a"], &mut cache);
        let p = EmbeddedText::cached(&["b", "c"], &mut cache);
        let direct = teacher_late_interaction(&["a", "b", "a"], &["b", "c"], &t);
        assert_eq!(q.late_interaction(&p), direct);
    }
}
