//! Ingest of collections, queries, training triples with teacher scores,
//! and TREC qrels / run files.

mod store;
mod trec;
mod triples;

pub use store::{load_collection, load_queries, tokenize, TextRecord, TextStore, PASSAGE_CAP, QUERY_CAP};
pub use trec::{load_qrels, load_run, write_run, Qrels, Run, ScoredPassage};
pub use triples::{load_triples_with_scores, TeacherScoreStore, TrainTriple, TrainingData};

/// A query with its capped token sequence.
pub type Query = TextRecord;
/// A passage with its capped token sequence.
pub type Passage = TextRecord;
/// Queries keyed by id.
pub type QueryStore = TextStore;
/// Passages keyed by id.
pub type PassageStore = TextStore;
