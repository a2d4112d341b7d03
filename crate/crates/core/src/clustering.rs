//! One-time k-means clustering of training-query embeddings into topics.

use std::collections::HashMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::corpus::TextStore;
use crate::encoder::StudentModel;
use crate::error::{Error, Result};
use crate::io_util::{atomic_write, put_f64s, put_string, read_bytes, ByteReader};

const MAGIC: &[u8; 4] = b"TSBC";
const VERSION: u8 = 1;

/// Queries per cluster used to derive the default cluster count.
pub const QUERIES_PER_CLUSTER: usize = 200;

/// `max(2, ⌈n / 200⌉)`.
pub fn default_cluster_count(num_queries: usize) -> usize {
    num_queries.div_ceil(QUERIES_PER_CLUSTER).max(2)
}

/// Result of a k-means run over plain vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct KMeansFit {
    pub k: usize,
    pub dim: usize,
    /// Row-major `k × dim`.
    pub centroids: Vec<f64>,
    pub assignment: Vec<usize>,
    /// Objective after the initial assignment and after every iteration.
    pub objective_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

impl KMeansFit {
    pub fn centroid(&self, c: usize) -> &[f64] {
        &self.centroids[c * self.dim..(c + 1) * self.dim]
    }

    pub fn objective(&self) -> f64 {
        *self.objective_trace.last().expect("trace is never empty")
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index of the nearest centroid; ties go to the lowest index.
fn nearest(point: &[f64], centroids: &[f64], dim: usize) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, centroid) in centroids.chunks_exact(dim).enumerate() {
        let d = sq_dist(point, centroid);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn assign(points: &[Vec<f64>], centroids: &[f64], dim: usize) -> Vec<usize> {
    points.par_iter().map(|p| nearest(p, centroids, dim).0).collect()
}

fn objective(points: &[Vec<f64>], centroids: &[f64], assignment: &[usize], dim: usize) -> f64 {
    points
        .iter()
        .zip(assignment)
        .map(|(p, &c)| sq_dist(p, &centroids[c * dim..(c + 1) * dim]))
        .sum()
}

fn kmeans_pp(points: &[Vec<f64>], k: usize, dim: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let n = points.len();
    let mut centroids = Vec::with_capacity(k * dim);
    let mut chosen = vec![false; n];
    let first = rng.random_range(0..n);
    chosen[first] = true;
    centroids.extend_from_slice(&points[first]);
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &points[first])).collect();

    for _ in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = None;
            for (i, &w) in d2.iter().enumerate() {
                if w > 0.0 {
                    if target < w {
                        pick = Some(i);
                        break;
                    }
                    target -= w;
                }
            }
            // Rounding can walk off the end; fall back to the last positive weight.
            pick.unwrap_or_else(|| d2.iter().rposition(|&w| w > 0.0).unwrap())
        } else {
            // Every remaining point coincides with a centroid.
            let free: Vec<usize> = (0..n).filter(|&i| !chosen[i]).collect();
            free[rng.random_range(0..free.len())]
        };
        chosen[pick] = true;
        let c = points[pick].clone();
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(sq_dist(p, &c));
        }
        centroids.extend_from_slice(&c);
    }
    centroids
}

fn update_centroids(points: &[Vec<f64>], assignment: &[usize], centroids: &mut [f64], dim: usize) -> Vec<usize> {
    let k = centroids.len() / dim;
    let mut sums = vec![0.0; k * dim];
    let mut counts = vec![0usize; k];
    for (p, &c) in points.iter().zip(assignment) {
        counts[c] += 1;
        for (s, x) in sums[c * dim..(c + 1) * dim].iter_mut().zip(p) {
            *s += x;
        }
    }
    for c in 0..k {
        if counts[c] > 0 {
            let inv = 1.0 / counts[c] as f64;
            for (dst, s) in centroids[c * dim..(c + 1) * dim]
                .iter_mut()
                .zip(&sums[c * dim..(c + 1) * dim])
            {
                *dst = s * inv;
            }
        }
    }
    counts
}

/// Moves the point farthest from its centroid into each empty cluster,
/// then recomputes the donor cluster's mean.
fn repair_empty(
    points: &[Vec<f64>],
    assignment: &mut [usize],
    centroids: &mut [f64],
    counts: &mut [usize],
    dim: usize,
) {
    while let Some(empty) = counts.iter().position(|&c| c == 0) {
        let donor_point = (0..points.len())
            .filter(|&i| counts[assignment[i]] >= 2)
            .map(|i| {
                let c = assignment[i];
                (i, sq_dist(&points[i], &centroids[c * dim..(c + 1) * dim]))
            })
            .fold(None, |best: Option<(usize, f64)>, cur| match best {
                Some(b) if b.1 >= cur.1 => Some(b),
                _ => Some(cur),
            })
            .map(|(i, _)| i)
            .expect("k <= n guarantees a cluster with two members");
        let donor = assignment[donor_point];
        assignment[donor_point] = empty;
        counts[donor] -= 1;
        counts[empty] = 1;
        centroids[empty * dim..(empty + 1) * dim].copy_from_slice(&points[donor_point]);

        let mut mean = vec![0.0; dim];
        for (p, _) in points.iter().zip(assignment.iter()).filter(|(_, &a)| a == donor) {
            for (m, x) in mean.iter_mut().zip(p) {
                *m += x;
            }
        }
        let inv = 1.0 / counts[donor] as f64;
        for (dst, m) in centroids[donor * dim..(donor + 1) * dim].iter_mut().zip(mean) {
            *dst = m * inv;
        }
    }
}

/// Lloyd's algorithm with k-means++ seeding.
///
/// Terminates when the assignment stops changing or after `max_iters`
/// iterations. Every cluster is non-empty on return. On convergence each
/// point sits in its nearest cluster (lowest index on ties).
pub fn kmeans(vectors: &[Vec<f64>], k: usize, max_iters: usize, seed: u64) -> Result<KMeansFit> {
    if k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    if max_iters == 0 {
        return Err(Error::invalid("max_iters must be at least 1"));
    }
    if k > vectors.len() {
        return Err(Error::invalid(format!(
            "k = {k} exceeds the {} input vectors",
            vectors.len()
        )));
    }
    let dim = vectors[0].len();
    if let Some(bad) = vectors.iter().find(|v| v.len() != dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            actual: bad.len(),
        });
    }
    if vectors.iter().flatten().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("k-means input"));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = kmeans_pp(vectors, k, dim, &mut rng);
    let mut assignment = assign(vectors, &centroids, dim);
    let mut trace = vec![objective(vectors, &centroids, &assignment, dim)];
    let mut converged = false;
    let mut iterations = 0;

    while iterations < max_iters {
        iterations += 1;
        let before_repair = assignment.clone();
        let mut counts = update_centroids(vectors, &assignment, &mut centroids, dim);
        repair_empty(vectors, &mut assignment, &mut centroids, &mut counts, dim);
        let next = assign(vectors, &centroids, dim);
        let stable = next == assignment;
        // Repair can fight the lowest-index tie rule on coincident points;
        // returning to the pre-repair assignment means no further progress.
        let cycling = next == before_repair && assignment != before_repair;
        if stable || cycling {
            trace.push(objective(vectors, &centroids, &assignment, dim));
            converged = true;
            break;
        }
        assignment = next;
        let obj = objective(vectors, &centroids, &assignment, dim);
        debug_assert!(
            obj <= trace.last().unwrap() * (1.0 + 1e-9) + 1e-12,
            "k-means objective increased: {} -> {obj}",
            trace.last().unwrap()
        );
        trace.push(obj);
    }

    if !converged {
        let mut counts = vec![0usize; k];
        assignment.iter().for_each(|&c| counts[c] += 1);
        if counts.contains(&0) {
            repair_empty(vectors, &mut assignment, &mut centroids, &mut counts, dim);
            trace.push(objective(vectors, &centroids, &assignment, dim));
        }
    }

    Ok(KMeansFit {
        k,
        dim,
        centroids,
        assignment,
        objective_trace: trace,
        iterations,
        converged,
    })
}

/// Topic clusters over training queries.
#[derive(Debug, Clone, PartialEq)]
pub struct TopicClusters {
    k: usize,
    d_emb: usize,
    seed: u64,
    centroids: Vec<f64>,
    query_ids: Vec<String>,
    assignment: Vec<usize>,
    members: Vec<Vec<usize>>,
    lookup: HashMap<String, usize>,
}

impl TopicClusters {
    pub fn new(query_ids: Vec<String>, fit: &KMeansFit, seed: u64) -> Result<Self> {
        Self::from_parts(
            fit.k,
            fit.dim,
            seed,
            fit.centroids.clone(),
            query_ids,
            fit.assignment.clone(),
        )
    }

    fn from_parts(
        k: usize,
        d_emb: usize,
        seed: u64,
        centroids: Vec<f64>,
        query_ids: Vec<String>,
        assignment: Vec<usize>,
    ) -> Result<Self> {
        if centroids.len() != k * d_emb {
            return Err(Error::DimensionMismatch {
                expected: k * d_emb,
                actual: centroids.len(),
            });
        }
        if query_ids.len() != assignment.len() {
            return Err(Error::DimensionMismatch {
                expected: query_ids.len(),
                actual: assignment.len(),
            });
        }
        let mut members = vec![Vec::new(); k];
        let mut lookup = HashMap::with_capacity(query_ids.len());
        for (i, (q, &c)) in query_ids.iter().zip(&assignment).enumerate() {
            if c >= k {
                return Err(Error::Format(format!("cluster index {c} out of range for k = {k}")));
            }
            if lookup.insert(q.clone(), c).is_some() {
                return Err(Error::DuplicateId(q.clone()));
            }
            members[c].push(i);
        }
        Ok(Self {
            k,
            d_emb,
            seed,
            centroids,
            query_ids,
            assignment,
            members,
            lookup,
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn d_emb(&self) -> usize {
        self.d_emb
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn centroid(&self, c: usize) -> &[f64] {
        &self.centroids[c * self.d_emb..(c + 1) * self.d_emb]
    }

    pub fn num_queries(&self) -> usize {
        self.query_ids.len()
    }

    pub fn cluster_of(&self, query_id: &str) -> Option<usize> {
        self.lookup.get(query_id).copied()
    }

    pub fn members(&self, c: usize) -> impl Iterator<Item = &str> + '_ {
        self.members[c].iter().map(|&i| self.query_ids[i].as_str())
    }

    pub fn cluster_size(&self, c: usize) -> usize {
        self.members[c].len()
    }

    /// `(query_id, cluster)` in input order.
    pub fn assignments(&self) -> impl Iterator<Item = (&str, usize)> {
        self.query_ids
            .iter()
            .map(String::as_str)
            .zip(self.assignment.iter().copied())
    }

    /// Binary cluster file: magic `TSBC`, version, `k`, `d_emb`, `seed`
    /// (u64 LE), centroids (f64 LE), assignment count, then
    /// `(u32 length + utf-8 id, u32 cluster)` per query.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.push(VERSION);
        out.extend_from_slice(&(self.k as u64).to_le_bytes());
        out.extend_from_slice(&(self.d_emb as u64).to_le_bytes());
        out.extend_from_slice(&self.seed.to_le_bytes());
        put_f64s(&mut out, &self.centroids);
        out.extend_from_slice(&(self.query_ids.len() as u64).to_le_bytes());
        for (q, &c) in self.query_ids.iter().zip(&self.assignment) {
            put_string(&mut out, q);
            out.extend_from_slice(&(c as u32).to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes, "cluster file");
        r.expect_magic(MAGIC, VERSION)?;
        let k = r.len()?;
        let d_emb = r.len()?;
        let seed = r.u64()?;
        let centroids = r.f64s(
            k.checked_mul(d_emb)
                .ok_or_else(|| Error::Format("cluster file: shape overflow".into()))?,
        )?;
        let n = r.len()?;
        let mut ids = Vec::with_capacity(n.min(1 << 20));
        let mut assignment = Vec::with_capacity(n.min(1 << 20));
        for _ in 0..n {
            ids.push(r.string()?);
            assignment.push(r.u32()? as usize);
        }
        r.finish()?;
        Self::from_parts(k, d_emb, seed, centroids, ids, assignment)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes();
        atomic_write(path, |w| w.write_all(&bytes))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&read_bytes(path)?)
    }

    /// Human-readable `query_id<TAB>cluster` listing.
    pub fn write_tsv(&self, path: &Path) -> Result<()> {
        atomic_write(path, |w| {
            for (q, c) in self.assignments() {
                writeln!(w, "{q}\t{c}")?;
            }
            Ok(())
        })
    }
}

/// Encodes every query with `model` and clusters the embeddings.
/// `k = None` uses [`default_cluster_count`].
pub fn cluster_queries(
    model: &StudentModel,
    queries: &TextStore,
    k: Option<usize>,
    max_iters: usize,
    seed: u64,
) -> Result<TopicClusters> {
    let vectors: Vec<Vec<f64>> = queries
        .iter()
        .map(|q| model.encode_tokens(&q.tokens))
        .collect::<Result<_>>()?;
    let k = k.unwrap_or_else(|| default_cluster_count(queries.len()));
    let fit = kmeans(&vectors, k, max_iters, seed)?;
    log::info!(
        "clustered {} queries into {k} clusters in {} iterations (objective {:.6})",
        queries.len(),
        fit.iterations,
        fit.objective()
    );
    TopicClusters::new(queries.iter().map(|q| q.id.clone()).collect(), &fit, seed)
}
