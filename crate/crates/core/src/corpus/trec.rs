//! TREC qrels (`qid 0 pid grade`) and run (`qid Q0 pid rank score tag`) files.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use crate::error::{Error, Result};
use crate::io_util::{atomic_write, open_lines};

/// Graded relevance judgments. Absent pairs have grade 0.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Qrels {
    judgments: BTreeMap<String, BTreeMap<String, u32>>,
}

impl Qrels {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, query_id: &str, passage_id: &str, grade: u32) {
        self.judgments
            .entry(query_id.to_owned())
            .or_default()
            .insert(passage_id.to_owned(), grade);
    }

    pub fn grade(&self, query_id: &str, passage_id: &str) -> u32 {
        self.judgments
            .get(query_id)
            .and_then(|m| m.get(passage_id))
            .copied()
            .unwrap_or(0)
    }

    pub fn judgments(&self, query_id: &str) -> Option<&BTreeMap<String, u32>> {
        self.judgments.get(query_id)
    }

    pub fn contains_query(&self, query_id: &str) -> bool {
        self.judgments.contains_key(query_id)
    }

    pub fn query_ids(&self) -> impl Iterator<Item = &str> {
        self.judgments.keys().map(String::as_str)
    }

    /// Passages judged at or above `min_grade` for a query.
    pub fn relevant(&self, query_id: &str, min_grade: u32) -> impl Iterator<Item = &str> {
        self.judgments
            .get(query_id)
            .into_iter()
            .flat_map(move |m| m.iter().filter(move |(_, &g)| g >= min_grade).map(|(p, _)| p.as_str()))
    }

    pub fn len(&self) -> usize {
        self.judgments.values().map(BTreeMap::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.judgments.is_empty()
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        atomic_write(path, |w| {
            for (q, m) in &self.judgments {
                for (p, g) in m {
                    writeln!(w, "{q} 0 {p} {g}")?;
                }
            }
            Ok(())
        })
    }
}

pub fn load_qrels(path: &Path) -> Result<Qrels> {
    let mut qrels = Qrels::new();
    for (line_no, line) in open_lines(path)? {
        let line = line?;
        let cols: Vec<&str> = line.split_whitespace().collect();
        if cols.is_empty() {
            continue;
        }
        if cols.len() != 4 {
            return Err(Error::parse(path, line_no, "expected `qid iter pid grade`"));
        }
        let grade: u32 = cols[3]
            .parse()
            .map_err(|_| Error::parse(path, line_no, format!("bad grade `{}`", cols[3])))?;
        qrels.insert(cols[0], cols[2], grade);
    }
    Ok(qrels)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredPassage {
    pub passage_id: String,
    pub score: f64,
}

/// Descending score, then ascending passage id.
pub(crate) fn rank_order(a: &ScoredPassage, b: &ScoredPassage) -> Ordering {
    b.score
        .partial_cmp(&a.score)
        .unwrap_or(Ordering::Equal)
        .then_with(|| a.passage_id.cmp(&b.passage_id))
}

/// Ranked retrieval output per query. Rankings are stored in rank order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Run {
    rankings: BTreeMap<String, Vec<ScoredPassage>>,
}

impl Run {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts an unsorted candidate list for a query; it is sorted by
    /// descending score with ties on ascending passage id.
    pub fn insert(&mut self, query_id: &str, candidates: Vec<(String, f64)>) -> Result<()> {
        let mut ranking: Vec<ScoredPassage> = candidates
            .into_iter()
            .map(|(passage_id, score)| ScoredPassage { passage_id, score })
            .collect();
        if ranking.iter().any(|s| s.score.is_nan()) {
            return Err(Error::NonFinite("run score"));
        }
        ranking.sort_by(rank_order);
        check_unique(query_id, &ranking)?;
        self.rankings.insert(query_id.to_owned(), ranking);
        Ok(())
    }

    /// Inserts a ranking that is already ordered by non-increasing score.
    /// Ties keep the given order.
    pub(crate) fn insert_ranked(&mut self, query_id: String, ranking: Vec<ScoredPassage>) {
        debug_assert!(ranking.windows(2).all(|w| w[0].score >= w[1].score));
        self.rankings.insert(query_id, ranking);
    }

    pub fn get(&self, query_id: &str) -> Option<&[ScoredPassage]> {
        self.rankings.get(query_id).map(Vec::as_slice)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[ScoredPassage])> {
        self.rankings.iter().map(|(q, r)| (q.as_str(), r.as_slice()))
    }

    pub fn query_ids(&self) -> impl Iterator<Item = &str> {
        self.rankings.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.rankings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rankings.is_empty()
    }

    /// Keeps the first `depth` passages of every ranking.
    pub fn truncated(&self, depth: usize) -> Run {
        Run {
            rankings: self
                .rankings
                .iter()
                .map(|(q, r)| (q.clone(), r[..r.len().min(depth)].to_vec()))
                .collect(),
        }
    }

    /// Same queries, same passage order, and scores within `tol`.
    pub fn approx_eq(&self, other: &Run, tol: f64) -> bool {
        self.rankings.len() == other.rankings.len()
            && self.rankings.iter().zip(&other.rankings).all(|((qa, ra), (qb, rb))| {
                qa == qb
                    && ra.len() == rb.len()
                    && ra
                        .iter()
                        .zip(rb)
                        .all(|(a, b)| a.passage_id == b.passage_id && (a.score - b.score).abs() <= tol)
            })
    }
}

fn check_unique(query_id: &str, ranking: &[ScoredPassage]) -> Result<()> {
    let mut seen = HashSet::with_capacity(ranking.len());
    for s in ranking {
        if !seen.insert(s.passage_id.as_str()) {
            return Err(Error::invalid(format!(
                "run lists passage `{}` twice for query `{query_id}`",
                s.passage_id
            )));
        }
    }
    Ok(())
}

/// Writes a run file. Scores are printed with six decimals.
pub fn write_run(run: &Run, path: &Path, tag: &str) -> Result<()> {
    if tag.is_empty() || tag.contains(char::is_whitespace) {
        return Err(Error::invalid(format!(
            "run tag `{tag}` must be a single non-empty word"
        )));
    }
    atomic_write(path, |w| {
        for (q, ranking) in &run.rankings {
            for (i, s) in ranking.iter().enumerate() {
                writeln!(w, "{q} Q0 {} {} {:.6} {tag}", s.passage_id, i + 1, s.score)?;
            }
        }
        Ok(())
    })
}

pub fn load_run(path: &Path) -> Result<Run> {
    let mut raw: BTreeMap<String, Vec<(usize, ScoredPassage)>> = BTreeMap::new();
    for (line_no, line) in open_lines(path)? {
        let line = line?;
        let cols: Vec<&str> = line.split_whitespace().collect();
        if cols.is_empty() {
            continue;
        }
        if cols.len() != 6 {
            return Err(Error::parse(path, line_no, "expected `qid Q0 pid rank score tag`"));
        }
        let rank: usize = cols[3]
            .parse()
            .map_err(|_| Error::parse(path, line_no, format!("bad rank `{}`", cols[3])))?;
        let score: f64 = cols[4]
            .parse()
            .ok()
            .filter(|s: &f64| !s.is_nan())
            .ok_or_else(|| Error::parse(path, line_no, format!("bad score `{}`", cols[4])))?;
        raw.entry(cols[0].to_owned()).or_default().push((
            rank,
            ScoredPassage {
                passage_id: cols[2].to_owned(),
                score,
            },
        ));
    }

    let mut run = Run::new();
    for (q, mut entries) in raw {
        entries.sort_by_key(|(r, _)| *r);
        let contiguous = entries.iter().enumerate().all(|(i, (r, _))| *r == i + 1);
        let mut ranking: Vec<ScoredPassage> = entries.into_iter().map(|(_, s)| s).collect();
        check_unique(&q, &ranking)?;
        let descending = ranking.windows(2).all(|w| w[0].score >= w[1].score);
        if !contiguous || !descending {
            log::warn!(
                "{}: ranks for query `{q}` are not contiguous and descending; re-ranking by score",
                path.display()
            );
            ranking.sort_by(rank_order);
        }
        run.insert_ranked(q, ranking);
    }
    Ok(run)
}
