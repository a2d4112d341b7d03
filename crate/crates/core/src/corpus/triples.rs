use std::collections::hash_map::Entry;
use std::collections::HashMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::io_util::{atomic_write, open_lines};

use super::TextStore;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TrainTriple {
    pub query_id: String,
    pub pos_id: String,
    pub neg_id: String,
}

/// Pairwise teacher scores keyed by `(query_id, passage_id)`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TeacherScoreStore {
    scores: HashMap<String, HashMap<String, f64>>,
    len: usize,
}

impl TeacherScoreStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Records a score. A second, different score for the same pair is an
    /// ambiguous teacher and rejected.
    pub fn insert(&mut self, query_id: &str, passage_id: &str, score: f64) -> Result<()> {
        if !score.is_finite() {
            return Err(Error::NonFinite("teacher score"));
        }
        let per_query = self.scores.entry(query_id.to_owned()).or_default();
        match per_query.entry(passage_id.to_owned()) {
            Entry::Vacant(v) => {
                v.insert(score);
                self.len += 1;
                Ok(())
            }
            Entry::Occupied(o) if *o.get() == score => Ok(()),
            Entry::Occupied(o) => Err(Error::invalid(format!(
                "ambiguous teacher score for ({query_id}, {passage_id}): {} vs {score}",
                o.get()
            ))),
        }
    }

    pub fn get(&self, query_id: &str, passage_id: &str) -> Option<f64> {
        self.scores.get(query_id)?.get(passage_id).copied()
    }

    pub fn score(&self, query_id: &str, passage_id: &str) -> Result<f64> {
        self.get(query_id, passage_id)
            .ok_or_else(|| Error::MissingTeacherScore {
                query: query_id.to_owned(),
                passage: passage_id.to_owned(),
            })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }
}

/// Training triples together with the pairwise teacher scores covering them.
#[derive(Debug, Clone, Default)]
pub struct TrainingData {
    pub triples: Vec<TrainTriple>,
    pub scores: TeacherScoreStore,
}

impl TrainingData {
    /// Adds a triple with both teacher scores.
    pub fn push(&mut self, triple: TrainTriple, score_pos: f64, score_neg: f64) -> Result<()> {
        if triple.pos_id == triple.neg_id {
            return Err(Error::invalid(format!(
                "triple ({}, {}, {}) has identical positive and negative",
                triple.query_id, triple.pos_id, triple.neg_id
            )));
        }
        self.scores.insert(&triple.query_id, &triple.pos_id, score_pos)?;
        self.scores.insert(&triple.query_id, &triple.neg_id, score_neg)?;
        self.triples.push(triple);
        Ok(())
    }

    /// Checks that every triple resolves against both stores and the scores.
    pub fn check_integrity(&self, queries: &TextStore, passages: &TextStore) -> Result<()> {
        for t in &self.triples {
            if !queries.contains(&t.query_id) {
                return Err(Error::UnknownId(t.query_id.clone()));
            }
            for p in [&t.pos_id, &t.neg_id] {
                if !passages.contains(p) {
                    return Err(Error::UnknownId(p.clone()));
                }
                self.scores.score(&t.query_id, p)?;
            }
        }
        Ok(())
    }

    /// Writes `qid<TAB>pos<TAB>neg` and `qid<TAB>pos<TAB>neg<TAB>s+<TAB>s-` files.
    pub fn write(&self, triples_path: &Path, scores_path: &Path) -> Result<()> {
        atomic_write(triples_path, |w| {
            for t in &self.triples {
                writeln!(w, "{}\t{}\t{}", t.query_id, t.pos_id, t.neg_id)?;
            }
            Ok(())
        })?;
        atomic_write(scores_path, |w| {
            for t in &self.triples {
                let sp = self.scores.get(&t.query_id, &t.pos_id).unwrap_or(f64::NAN);
                let sn = self.scores.get(&t.query_id, &t.neg_id).unwrap_or(f64::NAN);
                writeln!(w, "{}\t{}\t{}\t{sp}\t{sn}", t.query_id, t.pos_id, t.neg_id)?;
            }
            Ok(())
        })
    }
}

fn parse_score(path: &Path, line: usize, s: &str) -> Result<f64> {
    let v: f64 = s
        .parse()
        .map_err(|_| Error::parse(path, line, format!("bad score `{s}`")))?;
    if !v.is_finite() {
        return Err(Error::parse(path, line, format!("non-finite score `{s}`")));
    }
    Ok(v)
}

/// Loads training triples and their pairwise teacher scores.
///
/// The triples file has `qid<TAB>pos<TAB>neg` rows (extra columns ignored,
/// so the scores file can double as the triples file). The scores file has
/// `qid<TAB>pos<TAB>neg<TAB>score_pos<TAB>score_neg` rows and must cover
/// every triple exactly.
pub fn load_triples_with_scores(triples_path: &Path, scores_path: &Path) -> Result<TrainingData> {
    let mut by_triple: HashMap<TrainTriple, (f64, f64)> = HashMap::new();
    for (line_no, line) in open_lines(scores_path)? {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 5 {
            return Err(Error::parse(
                scores_path,
                line_no,
                "expected `qid<TAB>pos<TAB>neg<TAB>score_pos<TAB>score_neg`",
            ));
        }
        let triple = TrainTriple {
            query_id: cols[0].to_owned(),
            pos_id: cols[1].to_owned(),
            neg_id: cols[2].to_owned(),
        };
        let scores = (
            parse_score(scores_path, line_no, cols[3])?,
            parse_score(scores_path, line_no, cols[4])?,
        );
        match by_triple.entry(triple) {
            Entry::Vacant(v) => {
                v.insert(scores);
            }
            Entry::Occupied(o) if *o.get() == scores => {}
            Entry::Occupied(o) => {
                let t = o.key();
                return Err(Error::parse(
                    scores_path,
                    line_no,
                    format!(
                        "ambiguous teacher: triple ({}, {}, {}) scored twice differently",
                        t.query_id, t.pos_id, t.neg_id
                    ),
                ));
            }
        }
    }

    let mut data = TrainingData::default();
    for (line_no, line) in open_lines(triples_path)? {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() < 3 || cols[..3].iter().any(|c| c.is_empty()) {
            return Err(Error::parse(triples_path, line_no, "expected `qid<TAB>pos<TAB>neg`"));
        }
        let triple = TrainTriple {
            query_id: cols[0].to_owned(),
            pos_id: cols[1].to_owned(),
            neg_id: cols[2].to_owned(),
        };
        if triple.pos_id == triple.neg_id {
            return Err(Error::parse(
                triples_path,
                line_no,
                "positive and negative passage are identical",
            ));
        }
        let Some(&(sp, sn)) = by_triple.get(&triple) else {
            return Err(Error::MissingTeacherScore {
                query: triple.query_id,
                passage: format!("{} / {}", triple.pos_id, triple.neg_id),
            });
        };
        data.push(triple, sp, sn).map_err(|e| match e {
            Error::InvalidArgument(m) => Error::parse(triples_path, line_no, m),
            other => other,
        })?;
    }
    Ok(data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn file(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn parses_scored_triple() {
        let s = file("q1\tp1\tp2\t9.5\t3.5\n");
        let data = load_triples_with_scores(s.path(), s.path()).unwrap();
        assert_eq!(
            data.triples,
            vec![TrainTriple {
                query_id: "q1".into(),
                pos_id: "p1".into(),
                neg_id: "p2".into()
            }]
        );
        assert_eq!(data.scores.get("q1", "p1"), Some(9.5));
        assert_eq!(data.scores.get("q1", "p2"), Some(3.5));
    }

    #[test]
    fn identical_pos_neg_rejected() {
        let s = file("q1\tp1\tp1\t1\t1\n");
        assert!(load_triples_with_scores(s.path(), s.path()).is_err());
    }

    #[test]
    fn conflicting_duplicate_rejected() {
        let s = file("q1\tp1\tp2\t9.5\t3.5\nq1\tp1\tp2\t9.0\t3.5\n");
        let err = load_triples_with_scores(s.path(), s.path()).unwrap_err();
        assert!(err.to_string().contains("ambiguous"), "{err}");
    }

    #[test]
    fn missing_score_names_pair() {
        let t = file("q1\tp1\tp2\nq1\tp1\tp3\n");
        let s = file("q1\tp1\tp2\t2\t1\n");
        let err = load_triples_with_scores(t.path(), s.path()).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("q1") && msg.contains("p3"), "{msg}");
    }

    #[test]
    fn integrity_against_stores() {
        let s = file("q1\tp1\tp2\t2\t1\n");
        let data = load_triples_with_scores(s.path(), s.path()).unwrap();
        let q = TextStore::from_records(
            [super::super::TextRecord {
                id: "q1".into(),
                tokens: vec!["a".into()],
            }],
            30,
        )
        .unwrap();
        let p = TextStore::from_records(
            ["p1", "p2"].map(|id| super::super::TextRecord {
                id: id.into(),
                tokens: vec!["x".into()],
            }),
            200,
        )
        .unwrap();
        data.check_integrity(&q, &p).unwrap();
        let p_short = p.subset(["p1"]).unwrap();
        assert!(matches!(data.check_integrity(&q, &p_short), Err(Error::UnknownId(id)) if id == "p2"));
    }

    #[test]
    fn write_then_load() {
        let mut data = TrainingData::default();
        data.push(
            TrainTriple {
                query_id: "q".into(),
                pos_id: "a".into(),
                neg_id: "b".into(),
            },
            1.25,
            -0.5,
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let (tp, sp) = (dir.path().join("t.tsv"), dir.path().join("s.tsv"));
        data.write(&tp, &sp).unwrap();
        let back = load_triples_with_scores(&tp, &sp).unwrap();
        assert_eq!(back.triples, data.triples);
        assert_eq!(back.scores, data.scores);
    }
}
