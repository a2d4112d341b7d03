//! Dual-encoder student and the two teacher scorers.
//!
//! The student maps a bag of hashed tokens through a trainable matrix and
//! scores query/passage pairs with a dot product. Teachers are either a
//! lookup into precomputed pairwise scores or a late-interaction scorer over
//! frozen token embeddings.

mod features;
mod student;
mod teacher;

pub use features::{hash_features, FeatureVector, DEFAULT_D_FEAT};
pub use student::{dot, student_score, StudentModel, DEFAULT_D_EMB};
pub(crate) use teacher::EmbeddingCache;
pub use teacher::{
    teacher_late_interaction, EmbeddedText, LateInteractionTeacher, PairwiseTeacher, TokenEmbeddingTable, DEFAULT_D_TOK,
};

use crate::corpus::TextRecord;
use crate::error::Result;

/// Anything that scores a (query, passage) pair.
pub trait Scorer {
    fn score(&self, query: &TextRecord, passage: &TextRecord) -> Result<f64>;
}
