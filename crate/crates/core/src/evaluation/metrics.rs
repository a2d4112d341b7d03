use std::collections::BTreeMap;
use std::path::Path;

use crate::corpus::{Qrels, Run, ScoredPassage};
use crate::error::{Error, Result};
use crate::io_util::atomic_write;

/// Minimum grade counted as relevant by the binary metrics.
pub const DEFAULT_BINARIZATION: u32 = 2;

/// Per-query values of one metric plus their unweighted mean.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    name: String,
    per_query: BTreeMap<String, f64>,
    mean: f64,
}

impl MetricReport {
    pub fn from_values(name: impl Into<String>, per_query: BTreeMap<String, f64>) -> Self {
        let mean = if per_query.is_empty() {
            0.0
        } else {
            per_query.values().sum::<f64>() / per_query.len() as f64
        };
        Self {
            name: name.into(),
            per_query,
            mean,
        }
    }

    /// E.g. `nDCG@10`.
    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn per_query(&self) -> &BTreeMap<String, f64> {
        &self.per_query
    }

    pub fn get(&self, query_id: &str) -> Option<f64> {
        self.per_query.get(query_id).copied()
    }

    pub fn len(&self) -> usize {
        self.per_query.len()
    }

    pub fn is_empty(&self) -> bool {
        self.per_query.is_empty()
    }
}

fn check_cutoff(cutoff: usize) -> Result<()> {
    if cutoff == 0 {
        Err(Error::invalid("metric cutoff must be at least 1"))
    } else {
        Ok(())
    }
}

fn warn_unjudged(run: &Run, qrels: &Qrels) {
    let missing = run.query_ids().filter(|q| !qrels.contains_query(q)).count();
    if missing > 0 {
        log::warn!("{missing} run queries have no judgments and are skipped");
    }
}

/// Applies `f` to every run query that has at least one passage at
/// `min_grade`. Run queries without judgments are skipped.
fn per_query<F>(name: String, run: &Run, qrels: &Qrels, min_grade: u32, f: F) -> MetricReport
where
    F: Fn(&[ScoredPassage], &BTreeMap<String, u32>) -> f64,
{
    warn_unjudged(run, qrels);
    let values = run
        .iter()
        .filter_map(|(q, ranking)| {
            let judged = qrels.judgments(q)?;
            if !judged.values().any(|&g| g >= min_grade) {
                return None;
            }
            Some((q.to_owned(), f(ranking, judged)))
        })
        .collect();
    MetricReport::from_values(name, values)
}

/// nDCG with raw grades as gains and a `1 / log2(rank + 1)` discount.
pub fn ndcg_at(run: &Run, qrels: &Qrels, cutoff: usize) -> Result<MetricReport> {
    check_cutoff(cutoff)?;
    Ok(per_query(format!("nDCG@{cutoff}"), run, qrels, 1, |ranking, judged| {
        let discount = |i: usize| 1.0 / ((i + 2) as f64).log2();
        let dcg: f64 = ranking
            .iter()
            .take(cutoff)
            .enumerate()
            .map(|(i, s)| f64::from(judged.get(&s.passage_id).copied().unwrap_or(0)) * discount(i))
            .sum();
        let mut ideal: Vec<u32> = judged.values().copied().filter(|&g| g > 0).collect();
        ideal.sort_unstable_by(|a, b| b.cmp(a));
        let idcg: f64 = ideal
            .iter()
            .take(cutoff)
            .enumerate()
            .map(|(i, &g)| f64::from(g) * discount(i))
            .sum();
        dcg / idcg
    }))
}

/// Reciprocal rank of the first passage graded at least `binarization`.
pub fn mrr_at(run: &Run, qrels: &Qrels, cutoff: usize, binarization: u32) -> Result<MetricReport> {
    check_cutoff(cutoff)?;
    Ok(per_query(
        format!("MRR@{cutoff}"),
        run,
        qrels,
        binarization,
        |ranking, judged| {
            ranking
                .iter()
                .take(cutoff)
                .position(|s| judged.get(&s.passage_id).is_some_and(|&g| g >= binarization))
                .map_or(0.0, |i| 1.0 / (i + 1) as f64)
        },
    ))
}

fn recall_value(ranking: &[ScoredPassage], judged: &BTreeMap<String, u32>, cutoff: usize, binarization: u32) -> f64 {
    let total = judged.values().filter(|&&g| g >= binarization).count();
    let found = ranking
        .iter()
        .take(cutoff)
        .filter(|s| judged.get(&s.passage_id).is_some_and(|&g| g >= binarization))
        .count();
    found as f64 / total as f64
}

/// Fraction of passages graded at least `binarization` retrieved within
/// `cutoff`. `usize::MAX` means the whole ranking.
pub fn recall_at(run: &Run, qrels: &Qrels, cutoff: usize, binarization: u32) -> Result<MetricReport> {
    check_cutoff(cutoff)?;
    let name = if cutoff == usize::MAX {
        "R@all".to_owned()
    } else {
        format!("R@{cutoff}")
    };
    Ok(per_query(name, run, qrels, binarization, |ranking, judged| {
        recall_value(ranking, judged, cutoff, binarization)
    }))
}

/// Mean recall at each cutoff.
pub fn recall_curve(run: &Run, qrels: &Qrels, cutoffs: &[usize], binarization: u32) -> Result<Vec<(usize, f64)>> {
    cutoffs
        .iter()
        .map(|&c| recall_at(run, qrels, c, binarization).map(|r| (c, r.mean())))
        .collect()
}

/// `query_id<TAB>value` per query, then an `all` line with the mean.
pub fn write_metric_tsv(report: &MetricReport, path: &Path) -> Result<()> {
    atomic_write(path, |w| {
        writeln!(w, "query_id\t{}", report.name)?;
        for (q, v) in &report.per_query {
            writeln!(w, "{q}\t{v:.6}")?;
        }
        writeln!(w, "all\t{:.6}", report.mean)
    })
}

pub fn write_recall_curve_tsv(curve: &[(usize, f64)], path: &Path) -> Result<()> {
    atomic_write(path, |w| {
        writeln!(w, "cutoff\trecall")?;
        for (c, r) in curve {
            writeln!(w, "{c}\t{r:.6}")?;
        }
        Ok(())
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_of(q: &str, ids: &[&str]) -> Run {
        let mut run = Run::new();
        let n = ids.len();
        run.insert(
            q,
            ids.iter()
                .enumerate()
                .map(|(i, p)| (p.to_string(), (n - i) as f64))
                .collect(),
        )
        .unwrap();
        run
    }

    fn qrels_of(q: &str, judged: &[(&str, u32)]) -> Qrels {
        let mut qrels = Qrels::new();
        for (p, g) in judged {
            qrels.insert(q, p, *g);
        }
        qrels
    }

    #[test]
    fn ndcg_ideal_and_second_rank() {
        let qrels = qrels_of("q", &[("a", 3)]);
        assert_eq!(ndcg_at(&run_of("q", &["a", "b"]), &qrels, 10).unwrap().mean(), 1.0);
        let second = ndcg_at(&run_of("q", &["b", "a"]), &qrels, 10).unwrap().mean();
        assert!((second - 1.0 / 3f64.log2()).abs() < 1e-12);
        let mut empty = Run::new();
        empty.insert("q", Vec::new()).unwrap();
        let report = ndcg_at(&empty, &qrels, 10).unwrap();
        assert_eq!((report.len(), report.mean()), (1, 0.0));
        assert!(ndcg_at(&Run::new(), &qrels, 0).is_err());
    }

    #[test]
    fn mrr_binarizes_and_cuts_off() {
        let qrels = qrels_of("q", &[("a", 1), ("b", 2)]);
        assert_eq!(mrr_at(&run_of("q", &["a", "b"]), &qrels, 10, 2).unwrap().mean(), 0.5);
        let ids: Vec<String> = (0..10).map(|i| format!("x{i}")).collect();
        let mut long: Vec<&str> = ids.iter().map(String::as_str).collect();
        long.push("b");
        assert_eq!(mrr_at(&run_of("q", &long), &qrels, 10, 2).unwrap().mean(), 0.0);
        assert_eq!(mrr_at(&run_of("q", &long), &qrels, 11, 2).unwrap().mean(), 1.0 / 11.0);
    }

    #[test]
    fn recall_fractions() {
        let qrels = qrels_of("q", &[("a", 2), ("b", 2), ("c", 3), ("d", 2)]);
        assert_eq!(
            recall_at(&run_of("q", &["a", "b", "c", "d"]), &qrels, 10, 2)
                .unwrap()
                .mean(),
            1.0
        );
        assert_eq!(
            recall_at(&run_of("q", &["x", "c"]), &qrels, 10, 2).unwrap().mean(),
            0.25
        );
    }

    #[test]
    fn queries_without_relevants_are_skipped() {
        let mut qrels = qrels_of("q1", &[("a", 2)]);
        qrels.insert("q2", "b", 0);
        qrels.insert("q3", "c", 1);
        let mut run = run_of("q1", &["a"]);
        for q in ["q2", "q3", "q4"] {
            run.insert(q, vec![("a".to_owned(), 1.0)]).unwrap();
        }
        assert_eq!(ndcg_at(&run, &qrels, 10).unwrap().len(), 2);
        let mrr = mrr_at(&run, &qrels, 10, 2).unwrap();
        assert_eq!(mrr.len(), 1);
        assert_eq!(mrr.get("q1"), Some(1.0));
    }

    #[test]
    fn tsv_output() {
        let qrels = qrels_of("q", &[("a", 2)]);
        let report = ndcg_at(&run_of("q", &["a"]), &qrels, 10).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.tsv");
        write_metric_tsv(&report, &path).unwrap();
        assert_eq!(
            std::fs::read_to_string(&path).unwrap(),
            "query_id\tnDCG@10\nq\t1.000000\nall\t1.000000\n"
        );
    }
}
