//! Dense retrieval training with topic-aware, margin-balanced batch
//! sampling and dual-teacher Margin-MSE distillation.
//!
//! Pipeline: [`corpus`] ingest → pairwise-pretrained [`encoder`] baseline →
//! [`clustering`] of training queries → [`sampler`] batches → [`training`]
//! with pairwise and in-batch teachers → exact [`index`] search →
//! [`evaluation`]. [`pipeline`] ties the stages together behind one config.

pub mod clustering;
pub mod corpus;
pub mod encoder;
pub mod error;
pub mod evaluation;
pub mod index;
pub mod io_util;
pub mod pipeline;
pub mod sampler;
pub mod synthetic;
pub mod training;

pub use error::{Error, Result};
