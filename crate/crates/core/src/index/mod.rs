//! Exact inner-product top-k search over every passage embedding.

mod latency;

pub use latency::{latency_report, nearest_rank_percentile, write_latency_tsv, LatencyReport, PhaseStats};

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;

use crate::corpus::{ScoredPassage, TextStore};
use crate::encoder::{dot, StudentModel};
use crate::error::{Error, Result};
use crate::io_util::{atomic_write, put_f64s, put_string, read_bytes, ByteReader};

const MAGIC: &[u8; 4] = b"TSBI";
const VERSION: u8 = 1;

/// Flat index: one row per passage, row-major, ids aligned with rows.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseIndex {
    ids: Vec<String>,
    dim: usize,
    vectors: Vec<f64>,
    model_checksum: u64,
    build_ms: f64,
}

/// Encodes every passage with `model`.
pub fn build_index(model: &StudentModel, passages: &TextStore) -> Result<DenseIndex> {
    if passages.is_empty() {
        return Err(Error::invalid("cannot build an index over an empty passage store"));
    }
    let start = Instant::now();
    let dim = model.d_emb();
    let mut vectors = vec![0.0; passages.len() * dim];
    vectors
        .par_chunks_mut(dim)
        .zip(passages.records().par_iter())
        .try_for_each(|(row, p)| {
            model
                .encode_into(&model.features(&p.tokens), row)
                .map_err(|e| Error::invalid(format!("encoding passage `{}` failed: {e}", p.id)))?;
            if row.iter().all(|x| x.is_finite()) {
                Ok(())
            } else {
                Err(Error::invalid(format!(
                    "passage `{}` encodes to a non-finite vector",
                    p.id
                )))
            }
        })?;
    let ids = passages.iter().map(|p| p.id.clone()).collect();
    let mut index = DenseIndex::from_vectors(ids, dim, vectors, model.checksum())?;
    index.build_ms = start.elapsed().as_secs_f64() * 1e3;
    Ok(index)
}

/// Heap entry; `Ord` follows rank order so the heap top is the worst kept hit.
struct Candidate<'a> {
    score: f64,
    id: &'a str,
    row: usize,
}

impl Ord for Candidate<'_> {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .score
            .partial_cmp(&self.score)
            .unwrap_or(Ordering::Equal)
            .then_with(|| self.id.cmp(other.id))
    }
}

impl PartialOrd for Candidate<'_> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl PartialEq for Candidate<'_> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Candidate<'_> {}

impl DenseIndex {
    pub fn from_vectors(ids: Vec<String>, dim: usize, vectors: Vec<f64>, model_checksum: u64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("index dimension must be positive"));
        }
        if vectors.len() != ids.len() * dim {
            return Err(Error::DimensionMismatch {
                expected: ids.len() * dim,
                actual: vectors.len(),
            });
        }
        if vectors.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("index vector"));
        }
        let mut seen = std::collections::HashSet::with_capacity(ids.len());
        if let Some(dup) = ids.iter().find(|id| !seen.insert(id.as_str())) {
            return Err(Error::DuplicateId(dup.clone()));
        }
        Ok(Self {
            ids,
            dim,
            vectors,
            model_checksum,
            build_ms: 0.0,
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn vector(&self, row: usize) -> &[f64] {
        &self.vectors[row * self.dim..(row + 1) * self.dim]
    }

    pub fn model_checksum(&self) -> u64 {
        self.model_checksum
    }

    /// Wall-clock build time in milliseconds (0 for loaded indexes).
    pub fn build_ms(&self) -> f64 {
        self.build_ms
    }

    /// The `k` highest inner products, descending, ties on ascending id.
    /// `k` larger than the index is clamped.
    pub fn search(&self, query: &[f64], k: usize) -> Result<Vec<ScoredPassage>> {
        if query.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                actual: query.len(),
            });
        }
        if k == 0 {
            return Err(Error::invalid("k must be at least 1"));
        }
        if query.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("query vector"));
        }
        let k = k.min(self.len());
        let mut heap: BinaryHeap<Candidate<'_>> = BinaryHeap::with_capacity(k + 1);
        for (row, v) in self.vectors.chunks_exact(self.dim).enumerate() {
            let cand = Candidate {
                score: dot(query, v),
                id: &self.ids[row],
                row,
            };
            if heap.len() < k {
                heap.push(cand);
            } else if let Some(mut worst) = heap.peek_mut() {
                if cand < *worst {
                    *worst = cand;
                }
            }
        }
        Ok(heap
            .into_sorted_vec()
            .into_iter()
            .map(|c| ScoredPassage {
                passage_id: self.ids[c.row].clone(),
                score: c.score,
            })
            .collect())
    }

    /// Per-query [`search`](Self::search) on the global rayon pool.
    pub fn batch_search(&self, queries: &[Vec<f64>], k: usize) -> Result<Vec<Vec<ScoredPassage>>> {
        queries.par_iter().map(|q| self.search(q, k)).collect()
    }

    /// [`batch_search`](Self::batch_search) on a dedicated pool of `threads` workers.
    pub fn batch_search_with_threads(
        &self,
        queries: &[Vec<f64>],
        k: usize,
        threads: usize,
    ) -> Result<Vec<Vec<ScoredPassage>>> {
        if threads == 0 {
            return Err(Error::invalid("thread count must be at least 1"));
        }
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| Error::invalid(format!("thread pool: {e}")))?;
        pool.install(|| self.batch_search(queries, k))
    }

    /// Binary layout: magic `TSBI`, version, `|P|`, `d`, model checksum
    /// (u64 LE each), the ids, then row-major f64 LE vectors.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(29 + self.vectors.len() * 8 + self.ids.len() * 16);
        out.extend_from_slice(MAGIC);
        out.push(VERSION);
        out.extend_from_slice(&(self.ids.len() as u64).to_le_bytes());
        out.extend_from_slice(&(self.dim as u64).to_le_bytes());
        out.extend_from_slice(&self.model_checksum.to_le_bytes());
        for id in &self.ids {
            put_string(&mut out, id);
        }
        put_f64s(&mut out, &self.vectors);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes, "index");
        r.expect_magic(MAGIC, VERSION)?;
        let n = r.len()?;
        let dim = r.len()?;
        let checksum = r.u64()?;
        let ids = (0..n).map(|_| r.string()).collect::<Result<Vec<_>>>()?;
        let total = n
            .checked_mul(dim)
            .ok_or_else(|| Error::Format("index: shape overflow".into()))?;
        let vectors = r.f64s(total)?;
        r.finish()?;
        Self::from_vectors(ids, dim, vectors, checksum)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes();
        atomic_write(path, |w| w.write_all(&bytes))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&read_bytes(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::TextRecord;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_index(n: usize, dim: usize, seed: u64) -> DenseIndex {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ids = (0..n).map(|i| format!("p{i}")).collect();
        let vectors = (0..n * dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        DenseIndex::from_vectors(ids, dim, vectors, 0).unwrap()
    }

    fn full_sort(index: &DenseIndex, q: &[f64]) -> Vec<(String, f64)> {
        let mut all: Vec<(String, f64)> = (0..index.len())
            .map(|r| {
                (
                    index.ids()[r].clone(),
                    index.vector(r).iter().zip(q).map(|(a, b)| a * b).sum(),
                )
            })
            .collect();
        all.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then_with(|| a.0.cmp(&b.0)));
        all
    }

    #[test]
    fn full_ranking_matches_sort() {
        let index = random_index(300, 8, 1);
        let q = vec![0.3, -0.2, 0.9, 0.1, 0.0, -0.5, 0.4, 0.7];
        let got = index.search(&q, index.len() + 50).unwrap();
        let want = full_sort(&index, &q);
        assert_eq!(got.len(), want.len());
        for (g, w) in got.iter().zip(&want) {
            assert_eq!(g.passage_id, w.0);
            assert!((g.score - w.1).abs() < 1e-12);
        }
    }

    #[test]
    fn ties_break_on_ascending_id() {
        let ids = vec!["c".to_owned(), "a".to_owned(), "b".to_owned()];
        let index = DenseIndex::from_vectors(ids, 1, vec![1.0, 1.0, 1.0], 0).unwrap();
        let got: Vec<_> = index
            .search(&[2.0], 2)
            .unwrap()
            .into_iter()
            .map(|s| s.passage_id)
            .collect();
        assert_eq!(got, ["a", "b"]);
    }

    #[test]
    fn own_vector_ranks_first() {
        let mut vectors = vec![0.0; 16];
        for i in 0..4 {
            vectors[i * 4 + i] = 1.0;
        }
        let ids = (0..4).map(|i| format!("p{i}")).collect();
        let index = DenseIndex::from_vectors(ids, 4, vectors, 0).unwrap();
        assert_eq!(index.search(index.vector(2), 1).unwrap()[0].passage_id, "p2");
    }

    #[test]
    fn build_aligns_rows_and_is_deterministic() {
        let model = StudentModel::new(64, 8, 0.1, 3).unwrap();
        let store = TextStore::from_records(
            ["alpha beta", "gamma", "delta delta"]
                .iter()
                .enumerate()
                .map(|(i, t)| TextRecord {
                    id: format!("d{i}"),
                    tokens: crate::corpus::tokenize(t),
                }),
            200,
        )
        .unwrap();
        let a = build_index(&model, &store).unwrap();
        let b = build_index(&model, &store).unwrap();
        assert_eq!(a.len(), 3);
        assert_eq!(a.ids(), ["d0", "d1", "d2"]);
        assert_eq!(
            a.vector(1),
            model.encode_tokens(&store.records()[1].tokens).unwrap().as_slice()
        );
        assert_eq!(a.to_bytes(), b.to_bytes());
        assert_eq!(a.model_checksum(), model.checksum());
        assert!(build_index(&model, &TextStore::new(200)).is_err());
    }

    #[test]
    fn rejects_bad_queries() {
        let index = random_index(10, 4, 2);
        assert!(matches!(
            index.search(&[1.0; 3], 1),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(index.search(&[1.0; 4], 0).is_err());
        assert!(index.search(&[f64::NAN, 0.0, 0.0, 0.0], 1).is_err());
    }

    #[test]
    fn batch_matches_single_and_thread_count() {
        let index = random_index(2000, 16, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let queries: Vec<Vec<f64>> = (0..10)
            .map(|_| (0..16).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let one = index.batch_search_with_threads(&queries, 50, 1).unwrap();
        let many = index.batch_search_with_threads(&queries, 50, 4).unwrap();
        assert_eq!(one, many);
        assert_eq!(one.len(), 10);
        for (q, hits) in queries.iter().zip(&one) {
            assert_eq!(&index.search(q, 50).unwrap(), hits);
        }
        assert_eq!(
            index.batch_search(&queries[..1], 50).unwrap()[0],
            index.search(&queries[0], 50).unwrap()
        );
    }

    #[test]
    fn file_round_trip() {
        let index = random_index(20, 3, 6);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.idx");
        index.save(&path).unwrap();
        assert_eq!(DenseIndex::load(&path).unwrap(), index);
        let bytes = index.to_bytes();
        assert!(DenseIndex::from_bytes(&bytes[..bytes.len() - 1]).is_err());
    }
}
