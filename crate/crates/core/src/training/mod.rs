//! Two-phase training: teachers on their own inputs, then the student with
//! the weighted cross-entropy plus two distillation terms. Also data
//! preparation, checkpoints and inference.

mod checkpoint;
mod loss;
mod prepare;
mod trainer;
mod weights;

use crate::corpusgen::CorpusError;
use crate::evaluation::EvalError;
use crate::graphs::GraphError;
use crate::models::{ModelError, ModelKind};
use crate::numerics::NumericsError;
use crate::tokenizer::TokenizerError;

pub use checkpoint::{BestMetrics, Checkpoint, CheckpointError, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use loss::{student_loss, student_loss_terms, LossTerms};
pub use prepare::{prepare, prepare_samples, AstOverrides, PrepareConfig, PreparedData, PreparedSample};
pub use trainer::{
    check_vocab, evaluate_checkpoint, predict, predict_from_logits, teacher_logits, train_student, train_teacher_a,
    train_teacher_b, EpochLog, Prediction, TrainConfig, TrainOutcome, EVAL_BATCH,
};
pub use weights::{hyper_grid, hyper_grid_points, Ablation, DistillationWeights, GridPoint, GRID_GAMMAS, GRID_KAPPAS};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TrainError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Tokenizer(#[from] TokenizerError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("invalid distillation weights: {0}")]
    Weights(String),
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("missing prerequisite: {0}")]
    Precondition(String),
    #[error("{what} vocabulary hash mismatch: checkpoint has {expected}, data has {found}")]
    VocabMismatch {
        what: &'static str,
        expected: String,
        found: String,
    },
    #[error("{slot} expects a {expected} checkpoint, got {found}")]
    KindMismatch {
        slot: &'static str,
        expected: ModelKind,
        found: ModelKind,
    },
    #[error("{0} split is empty")]
    EmptySplit(&'static str),
}
