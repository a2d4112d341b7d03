use std::io::Write;

use rand::seq::index::sample;
use rand::Rng;

use super::{Batch, BatchTuple, BinnedPairs, ClusterIndex, ScoredPair, Strategy, TrainingPool};
use crate::error::{Error, Result};

/// Cluster redraws allowed before giving up on finding one that is large
/// enough for `⌊b/n⌋` queries.
pub const MAX_CLUSTER_ATTEMPTS: usize = 100;

fn tuple(pool: &TrainingPool, q: usize, pair: usize, cluster: Option<usize>, bin: Option<usize>) -> BatchTuple {
    let qp = pool.get(q);
    let ScoredPair {
        pos_id,
        neg_id,
        t_pos,
        t_neg,
    } = &qp.pairs[pair];
    BatchTuple {
        query_id: qp.query_id.clone(),
        pos_id: pos_id.clone(),
        neg_id: neg_id.clone(),
        t_pos: *t_pos,
        t_neg: *t_neg,
        cluster,
        bin,
    }
}

/// `b` distinct queries uniformly from the pool, one uniform pair each.
pub fn sample_random_batch<R: Rng + ?Sized>(pool: &TrainingPool, b: usize, rng: &mut R) -> Result<Batch> {
    if b == 0 {
        return Err(Error::invalid("batch size must be at least 1"));
    }
    if pool.len() < b {
        return Err(Error::Sampler(format!(
            "pool has {} queries, fewer than batch size {b}",
            pool.len()
        )));
    }
    let tuples = sample(rng, pool.len(), b)
        .into_iter()
        .map(|q| {
            let pair = rng.random_range(0..pool.get(q).pairs.len());
            tuple(pool, q, pair, None, None)
        })
        .collect();
    Ok(Batch {
        strategy: Strategy::Random,
        tuples,
        clusters: Vec::new(),
    })
}

/// Chosen clusters and the `(cluster, pool index)` of each drawn query.
type TopicDraw = (Vec<usize>, Vec<(usize, usize)>);

/// Draws `n` distinct clusters holding at least `per` queries each, then
/// `per` distinct queries from each.
fn topic_queries<R: Rng + ?Sized>(clusters: &ClusterIndex, b: usize, n: usize, rng: &mut R) -> Result<TopicDraw> {
    if n == 0 || n > b {
        return Err(Error::invalid(format!(
            "clusters per batch must be in [1, {b}], got {n}"
        )));
    }
    let per = b / n;
    let mut available: Vec<usize> = (0..clusters.k()).collect();
    let mut chosen = Vec::with_capacity(n);
    let mut rejected = 0usize;
    while chosen.len() < n {
        if available.is_empty() || rejected > MAX_CLUSTER_ATTEMPTS {
            return Err(Error::Sampler(format!(
                "could not find {n} clusters with at least {per} queries each"
            )));
        }
        let c = available.swap_remove(rng.random_range(0..available.len()));
        if clusters.members(c).len() < per {
            rejected += 1;
            continue;
        }
        chosen.push(c);
    }
    let mut picks = Vec::with_capacity(n * per);
    for &c in &chosen {
        let members = clusters.members(c);
        picks.extend(sample(rng, members.len(), per).into_iter().map(|i| (c, members[i])));
    }
    Ok((chosen, picks))
}

/// Topic-aware batch: `n·⌊b/n⌋` queries from `n` random clusters, one
/// uniform pair per query.
pub fn sample_tas_batch<R: Rng + ?Sized>(
    pool: &TrainingPool,
    clusters: &ClusterIndex,
    b: usize,
    n: usize,
    rng: &mut R,
) -> Result<Batch> {
    let (chosen, picks) = topic_queries(clusters, b, n, rng)?;
    let tuples = picks
        .into_iter()
        .map(|(c, q)| {
            let pair = rng.random_range(0..pool.get(q).pairs.len());
            tuple(pool, q, pair, Some(c), None)
        })
        .collect();
    Ok(Batch {
        strategy: Strategy::Tas,
        tuples,
        clusters: chosen,
    })
}

/// Topic-aware batch with balanced margin sampling: per query, a uniform
/// non-empty margin bin, then a uniform pair inside it.
pub fn sample_tas_balanced_batch<R: Rng + ?Sized>(
    pool: &TrainingPool,
    clusters: &ClusterIndex,
    binned: &[BinnedPairs],
    b: usize,
    n: usize,
    rng: &mut R,
) -> Result<Batch> {
    if binned.len() != pool.len() {
        return Err(Error::DimensionMismatch {
            expected: pool.len(),
            actual: binned.len(),
        });
    }
    let (chosen, picks) = topic_queries(clusters, b, n, rng)?;
    let tuples = picks
        .into_iter()
        .map(|(c, q)| {
            let bins = &binned[q];
            let non_empty = bins.non_empty_bins();
            let bin = match non_empty {
                [only] => *only,
                _ => non_empty[rng.random_range(0..non_empty.len())],
            };
            let members = &bins.bins[bin];
            let pair = members[rng.random_range(0..members.len())];
            tuple(pool, q, pair, Some(c), Some(bin))
        })
        .collect();
    Ok(Batch {
        strategy: Strategy::TasBalanced,
        tuples,
        clusters: chosen,
    })
}

/// Appends a batch as TSV rows:
/// `step strategy cluster query pos neg t_pos t_neg bin` (`-` when absent).
pub fn write_batch_dump(w: &mut dyn Write, step: usize, batch: &Batch) -> std::io::Result<()> {
    let opt = |o: Option<usize>| o.map_or_else(|| "-".to_owned(), |v| v.to_string());
    for t in &batch.tuples {
        writeln!(
            w,
            "{step}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            batch.strategy,
            opt(t.cluster),
            t.query_id,
            t.pos_id,
            t.neg_id,
            t.t_pos,
            t.t_neg,
            opt(t.bin)
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampler::{compute_margin_bins, QueryPairs};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::collections::HashSet;

    pub(crate) fn pool_with(num_queries: usize, pairs_per_query: usize) -> TrainingPool {
        TrainingPool::from_queries(
            (0..num_queries)
                .map(|q| QueryPairs {
                    query_id: format!("q{q}"),
                    pairs: (0..pairs_per_query)
                        .map(|i| ScoredPair {
                            pos_id: format!("p{q}_{i}"),
                            neg_id: format!("n{q}_{i}"),
                            t_pos: 10.0,
                            t_neg: i as f64,
                        })
                        .collect(),
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn random_exhausts_small_pool() {
        let pool = pool_with(8, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let batch = sample_random_batch(&pool, 8, &mut rng).unwrap();
        let ids: HashSet<_> = batch.tuples.iter().map(|t| t.query_id.clone()).collect();
        assert_eq!(ids.len(), 8);
        assert_eq!(sample_random_batch(&pool, 1, &mut rng).unwrap().len(), 1);
        assert!(sample_random_batch(&pool, 9, &mut rng).is_err());
    }

    #[test]
    fn random_selection_is_uniform() {
        let pool = pool_with(10, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let draws = 100_000;
        let mut counts = [0usize; 10];
        for _ in 0..draws {
            for t in sample_random_batch(&pool, 2, &mut rng).unwrap().tuples {
                counts[t.query_id[1..].parse::<usize>().unwrap()] += 1;
            }
        }
        for c in counts {
            let freq = c as f64 / draws as f64;
            assert!((freq - 0.2).abs() < 0.01, "{freq}");
        }
    }

    fn clusters_of(sizes: &[usize]) -> ClusterIndex {
        let mut next = 0;
        ClusterIndex::from_lists(
            sizes
                .iter()
                .map(|&s| {
                    let v: Vec<usize> = (next..next + s).collect();
                    next += s;
                    v
                })
                .collect(),
        )
    }

    #[test]
    fn tas_single_cluster() {
        let pool = pool_with(200, 2);
        let clusters = clusters_of(&[40, 40, 40, 40, 40]);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let batch = sample_tas_batch(&pool, &clusters, 32, 1, &mut rng).unwrap();
            assert_eq!(batch.len(), 32);
            assert_eq!(batch.clusters.len(), 1);
            let c = batch.clusters[0];
            assert!(batch.tuples.iter().all(|t| t.cluster == Some(c)));
            let ids: HashSet<_> = batch.tuples.iter().map(|t| &t.query_id).collect();
            assert_eq!(ids.len(), 32);
        }
    }

    #[test]
    fn tas_two_clusters_split_evenly() {
        let pool = pool_with(200, 2);
        let clusters = clusters_of(&[40, 40, 40, 40, 40]);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let batch = sample_tas_batch(&pool, &clusters, 32, 2, &mut rng).unwrap();
        assert_eq!(batch.clusters.len(), 2);
        assert_ne!(batch.clusters[0], batch.clusters[1]);
        for &c in &batch.clusters {
            assert_eq!(batch.tuples.iter().filter(|t| t.cluster == Some(c)).count(), 16);
        }
    }

    #[test]
    fn tas_n_equals_b() {
        let pool = pool_with(40, 1);
        let clusters = clusters_of(&[4; 10]);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let batch = sample_tas_batch(&pool, &clusters, 10, 10, &mut rng).unwrap();
        assert_eq!(batch.len(), 10);
        let cs: HashSet<_> = batch.tuples.iter().map(|t| t.cluster.unwrap()).collect();
        assert_eq!(cs.len(), 10);
    }

    #[test]
    fn tas_skips_small_clusters_and_errors_when_none_fit() {
        let pool = pool_with(50, 1);
        let clusters = clusters_of(&[3, 3, 40, 4]);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..20 {
            assert_eq!(
                sample_tas_batch(&pool, &clusters, 32, 1, &mut rng).unwrap().clusters,
                vec![2]
            );
        }
        let tiny = clusters_of(&[5, 5, 5]);
        assert!(matches!(
            sample_tas_batch(&pool, &tiny, 32, 1, &mut rng),
            Err(Error::Sampler(_))
        ));
    }

    #[test]
    fn balanced_unskews_99_to_1() {
        // 99 pairs at the minimum margin, one at the maximum: bins 0 and 9.
        let mut pairs: Vec<ScoredPair> = (0..99)
            .map(|i| ScoredPair {
                pos_id: format!("p{i}"),
                neg_id: format!("n{i}"),
                t_pos: 2.0,
                t_neg: 1.0,
            })
            .collect();
        pairs.push(ScoredPair {
            pos_id: "pz".into(),
            neg_id: "nz".into(),
            t_pos: 12.0,
            t_neg: 1.0,
        });
        let pool = TrainingPool::from_queries(vec![QueryPairs {
            query_id: "q".into(),
            pairs,
        }])
        .unwrap();
        let binned = vec![compute_margin_bins(pool.get(0), 10)];
        let clusters = clusters_of(&[1]);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let draws = 10_000;
        let mut zero = 0;
        for _ in 0..draws {
            let t = &sample_tas_balanced_batch(&pool, &clusters, &binned, 1, 1, &mut rng)
                .unwrap()
                .tuples[0];
            assert_eq!(binned[0].bin_of(t.t_pos - t.t_neg), t.bin.unwrap());
            zero += usize::from(t.bin == Some(0));
        }
        let frac = zero as f64 / draws as f64;
        assert!((frac - 0.5).abs() < 0.03, "{frac}");
    }

    #[test]
    fn single_bin_behaves_like_tas() {
        let pool = pool_with(40, 5);
        let binned: Vec<_> = pool.queries().iter().map(|q| compute_margin_bins(q, 1)).collect();
        let clusters = clusters_of(&[20, 20]);
        let mut r1 = ChaCha8Rng::seed_from_u64(10);
        let mut r2 = ChaCha8Rng::seed_from_u64(10);
        for _ in 0..20 {
            let a = sample_tas_batch(&pool, &clusters, 8, 1, &mut r1).unwrap();
            let b = sample_tas_balanced_batch(&pool, &clusters, &binned, 8, 1, &mut r2).unwrap();
            let strip = |batch: &Batch| {
                batch
                    .tuples
                    .iter()
                    .map(|t| (t.query_id.clone(), t.pos_id.clone(), t.neg_id.clone()))
                    .collect::<Vec<_>>()
            };
            assert_eq!(strip(&a), strip(&b));
            assert!(b.tuples.iter().all(|t| t.bin == Some(0)));
        }
    }

    #[test]
    fn dump_format() {
        let pool = pool_with(2, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let batch = sample_random_batch(&pool, 1, &mut rng).unwrap();
        let mut out = Vec::new();
        write_batch_dump(&mut out, 3, &batch).unwrap();
        let line = String::from_utf8(out).unwrap();
        assert_eq!(line.trim_end().split('\t').count(), 9);
        assert!(line.starts_with("3\trandom\t-\t"));
    }
}
