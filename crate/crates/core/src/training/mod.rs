//! Distillation training of the student: losses, analytic gradients,
//! Adam, and validation-driven early stopping.

mod adam;
mod early_stop;
mod loss;
mod objective;
mod trainer;
mod validation;

pub use adam::{adam_step, Adam};
pub use early_stop::{early_stop_check, EarlyStopping, EvalDecision};
pub use loss::{
    dual_loss, inbatch_margin_mse, kldiv_inbatch_loss, kldiv_list_loss, listnet_inbatch_loss, listnet_list_loss,
    margin_mse, pairwise_margin_mse, ScoreMatrices,
};
pub use objective::{
    batch_loss, grad_dual_loss, loss_and_grad_into, BatchPreparer, LossValue, Objective, PreparedBatch,
};
pub use trainer::{train, TrainInputs, TrainOutcome, ValidationData};
pub use validation::{build_validation_set, ValidationParams, ValidationSet, VALIDATION_CUTOFF};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::encoder::DEFAULT_D_TOK;
use crate::error::{Error, Result};

/// Which teacher signals supervise the student.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TeacherMode {
    /// Pairwise cross-encoder margins only.
    Pairwise,
    /// Late-interaction teacher over all in-batch combinations only.
    #[serde(rename = "inbatch")]
    InBatch,
    /// `L_pair + α · L_inb`.
    Dual,
}

impl TeacherMode {
    pub const ALL: [TeacherMode; 3] = [TeacherMode::Pairwise, TeacherMode::InBatch, TeacherMode::Dual];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Pairwise => "pairwise",
            Self::InBatch => "inbatch",
            Self::Dual => "dual",
        }
    }
}

impl fmt::Display for TeacherMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TeacherMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL.into_iter().find(|m| m.as_str() == s).ok_or_else(|| {
            Error::invalid(format!(
                "unknown teacher mode `{s}` (expected pairwise, inbatch or dual)"
            ))
        })
    }
}

/// Loss family for the in-batch teacher.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InBatchLoss {
    #[default]
    MarginMse,
    #[serde(rename = "kldiv")]
    KlDiv,
    #[serde(rename = "listnet")]
    ListNet,
}

impl InBatchLoss {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::MarginMse => "margin-mse",
            Self::KlDiv => "kldiv",
            Self::ListNet => "listnet",
        }
    }
}

impl fmt::Display for InBatchLoss {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for InBatchLoss {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [Self::MarginMse, Self::KlDiv, Self::ListNet]
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| {
                Error::invalid(format!(
                    "unknown in-batch loss `{s}` (expected margin-mse, kldiv or listnet)"
                ))
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub teacher_mode: TeacherMode,
    pub inbatch_loss: InBatchLoss,
    pub alpha: f64,
    pub learning_rate: f64,
    pub max_steps: usize,
    /// Steps between validation evaluations.
    pub eval_interval: usize,
    /// Non-improving evaluations tolerated before stopping.
    pub patience: usize,
    /// Dimension of the late-interaction teacher's token vectors.
    pub teacher_dim: usize,
    pub teacher_seed: u64,
    /// Leading batches written to the batch dump.
    pub dump_batches: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            teacher_mode: TeacherMode::Dual,
            inbatch_loss: InBatchLoss::MarginMse,
            alpha: 0.75,
            learning_rate: 1e-3,
            max_steps: 20_000,
            eval_interval: 4000,
            patience: 30,
            teacher_dim: DEFAULT_D_TOK,
            teacher_seed: 0,
            dump_batches: 0,
        }
    }
}

impl TrainConfig {
    pub fn objective(&self) -> Objective {
        Objective {
            mode: self.teacher_mode,
            alpha: self.alpha,
            inbatch_loss: self.inbatch_loss,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.objective().validate()?;
        if !self.learning_rate.is_finite() || self.learning_rate <= 0.0 {
            return Err(Error::Config(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.max_steps == 0 || self.eval_interval == 0 {
            return Err(Error::Config("max_steps and eval_interval must be positive".into()));
        }
        if self.patience == 0 {
            return Err(Error::Config("patience must be at least 1".into()));
        }
        if self.teacher_dim == 0 {
            return Err(Error::Config("teacher_dim must be positive".into()));
        }
        Ok(())
    }
}
