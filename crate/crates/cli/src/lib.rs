//! Command implementations behind the `vulndistill` binary: corpus
//! generation, preparation, the two training phases, evaluation and
//! prediction, all driven by a resolved [`RunConfig`].

pub mod commands;
pub mod config;

pub use config::{RunConfig, KEYS, SEED_ENV};

use vulndistill::evaluation::EvalError;
use vulndistill::training::TrainError;

/// Failure of a command, classified by exit code.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PipelineError {
    /// Bad flags, config keys or values.
    #[error("{0}")]
    Usage(String),
    /// Missing, malformed or mismatched input artifacts.
    #[error("{0}")]
    Data(String),
    /// A violated internal invariant.
    #[error("internal error: {0}")]
    Internal(String),
}

impl PipelineError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Usage(_) => 2,
            Self::Data(_) => 3,
            Self::Internal(_) => 4,
        }
    }
}

impl From<TrainError> for PipelineError {
    fn from(e: TrainError) -> Self {
        let msg = e.to_string();
        match e {
            TrainError::Config(_) | TrainError::Weights(_) | TrainError::Eval(EvalError::UnknownFormat(_)) => {
                Self::Usage(msg)
            }
            TrainError::Precondition(_)
            | TrainError::VocabMismatch { .. }
            | TrainError::KindMismatch { .. }
            | TrainError::Checkpoint(_)
            | TrainError::Corpus(_)
            | TrainError::EmptySplit(_)
            | TrainError::Tokenizer(_)
            | TrainError::Eval(_) => Self::Data(msg),
            TrainError::Model(_) | TrainError::Numerics(_) | TrainError::Graph(_) => Self::Internal(msg),
        }
    }
}
