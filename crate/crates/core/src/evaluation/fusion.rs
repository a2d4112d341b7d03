use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::{Run, ScoredPassage};
use crate::error::{Error, Result};

pub const DEFAULT_FUSION_WEIGHT: f64 = 0.5;
pub const DEFAULT_RRF_K: f64 = 60.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FusionMethod {
    /// Per-query min-max normalization, then a convex combination.
    #[default]
    MinMax,
    /// Weighted reciprocal rank fusion with `k = 60`.
    Rrf,
}

impl fmt::Display for FusionMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::MinMax => "min-max",
            Self::Rrf => "rrf",
        })
    }
}

impl FromStr for FusionMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "min-max" => Ok(Self::MinMax),
            "rrf" => Ok(Self::Rrf),
            other => Err(Error::invalid(format!(
                "unknown fusion method `{other}` (expected min-max or rrf)"
            ))),
        }
    }
}

fn normalized(ranking: &[ScoredPassage], method: FusionMethod) -> HashMap<&str, f64> {
    match method {
        FusionMethod::MinMax => {
            let (lo, hi) = ranking.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), s| {
                (lo.min(s.score), hi.max(s.score))
            });
            let range = hi - lo;
            ranking
                .iter()
                .map(|s| {
                    let v = if range > 0.0 { (s.score - lo) / range } else { 1.0 };
                    (s.passage_id.as_str(), v)
                })
                .collect()
        }
        FusionMethod::Rrf => ranking
            .iter()
            .enumerate()
            .map(|(i, s)| (s.passage_id.as_str(), 1.0 / (DEFAULT_RRF_K + (i + 1) as f64)))
            .collect(),
    }
}

/// Fuses two runs per query: `weight · a + (1 − weight) · b` over the
/// union of both candidate pools. A passage missing from one run scores 0
/// there.
pub fn fuse_runs(a: &Run, b: &Run, weight: f64, method: FusionMethod) -> Result<Run> {
    if !(0.0..=1.0).contains(&weight) {
        return Err(Error::invalid(format!("fusion weight {weight} outside [0, 1]")));
    }
    let mut queries: Vec<&str> = a.query_ids().chain(b.query_ids()).collect();
    queries.sort_unstable();
    queries.dedup();
    let mut fused = Run::new();
    for q in queries {
        let na = normalized(a.get(q).unwrap_or(&[]), method);
        let nb = normalized(b.get(q).unwrap_or(&[]), method);
        let mut scores: HashMap<&str, f64> = HashMap::with_capacity(na.len() + nb.len());
        for (p, v) in &na {
            *scores.entry(p).or_default() += weight * v;
        }
        for (p, v) in &nb {
            *scores.entry(p).or_default() += (1.0 - weight) * v;
        }
        fused.insert(q, scores.into_iter().map(|(p, s)| (p.to_owned(), s)).collect())?;
    }
    Ok(fused)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(entries: &[(&str, f64)]) -> Run {
        let mut r = Run::new();
        r.insert("q", entries.iter().map(|(p, s)| (p.to_string(), *s)).collect())
            .unwrap();
        r
    }

    fn order(r: &Run) -> Vec<String> {
        r.get("q").unwrap().iter().map(|s| s.passage_id.clone()).collect()
    }

    #[test]
    fn weight_one_keeps_run_a_order() {
        let a = run(&[("a1", 9.0), ("a2", 5.0), ("a3", 4.0), ("a4", 1.0)]);
        let b = run(&[("a4", 3.0), ("b1", 2.0), ("b2", 1.0)]);
        let f = fuse_runs(&a, &b, 1.0, FusionMethod::MinMax).unwrap();
        let kept: Vec<String> = order(&f).into_iter().filter(|p| p.starts_with('a')).collect();
        assert_eq!(kept, order(&a));
        assert_eq!(order(&f).len(), 6);
    }

    #[test]
    fn shared_top_passage_wins() {
        let a = run(&[("x", 3.0), ("a", 1.0)]);
        let b = run(&[("x", 7.0), ("b", 2.0)]);
        let f = fuse_runs(&a, &b, 0.5, FusionMethod::MinMax).unwrap();
        let top = &f.get("q").unwrap()[0];
        assert_eq!(top.passage_id, "x");
        assert!((top.score - 1.0).abs() < 1e-12);
        assert!(f.get("q").unwrap()[1].score <= 0.5);
    }

    #[test]
    fn rrf_and_bounds() {
        let a = run(&[("x", 3.0), ("y", 1.0)]);
        let b = run(&[("y", 3.0), ("x", 1.0)]);
        let f = fuse_runs(&a, &b, 0.5, FusionMethod::Rrf).unwrap();
        let r = f.get("q").unwrap();
        assert_eq!(r[0].score, r[1].score);
        assert!(fuse_runs(&a, &b, 1.5, FusionMethod::MinMax).is_err());
        assert_eq!("rrf".parse::<FusionMethod>().unwrap(), FusionMethod::Rrf);
        assert!("sum".parse::<FusionMethod>().is_err());
    }
}
