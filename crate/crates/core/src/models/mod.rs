//! The convolutional token classifier (teacher A), the graph network over
//! structure tokens (teacher B) and the three-headed transformer student.
//!
//! Each model owns a [`ParamStore`]: parameters are registered in a fixed
//! order with fixed names so a store can be rebuilt from a checkpoint and
//! re-bound with [`TeacherA::bind`] and friends.

mod layout;
mod student;
mod teacher_a;
mod teacher_b;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::numerics::{NumericsError, ParamStore};

pub use layout::{Init, ParamSpec};
pub use student::{Attention, Student, StudentConfig, StudentOutputs};
pub use teacher_a::{TeacherA, TeacherAConfig};
pub use teacher_b::{Readout, TeacherB, TeacherBConfig};

/// Random source for initialisation and dropout. `None` where a forward pass
/// takes `Option<&mut ModelRng>` means evaluation mode.
pub type ModelRng = ChaCha8Rng;

pub const NUM_CLASSES: usize = 2;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ModelError {
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("invalid model input: {0}")]
    Input(String),
    #[error("parameter {0:?} missing from store")]
    MissingParam(String),
    #[error("parameter {name:?} has shape {found:?}, expected {expected:?}")]
    ParamShape {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("store holds {found} parameters, model expects {expected}")]
    ParamCount { expected: usize, found: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Head {
    Cls,
    Dia,
    Dib,
    TeacherA,
    TeacherB,
}

/// One head's two-class output for one sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Logits {
    pub head: Head,
    pub values: [f64; NUM_CLASSES],
}

impl Logits {
    pub fn new(head: Head, values: [f64; NUM_CLASSES]) -> Self {
        Self { head, values }
    }

    /// Splits a `[B, 2]` row-major buffer into per-sample logits.
    pub fn from_rows(head: Head, data: &[f64]) -> Vec<Self> {
        data.chunks(NUM_CLASSES).map(|r| Self::new(head, [r[0], r[1]])).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// Config of any of the three models, tagged by kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelConfig {
    TeacherA(TeacherAConfig),
    TeacherB(TeacherBConfig),
    Student(StudentConfig),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    TeacherA,
    TeacherB,
    Student,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::TeacherA => "teacher_a",
            Self::TeacherB => "teacher_b",
            Self::Student => "student",
        }
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl ModelConfig {
    pub fn kind(&self) -> ModelKind {
        match self {
            Self::TeacherA(_) => ModelKind::TeacherA,
            Self::TeacherB(_) => ModelKind::TeacherB,
            Self::Student(_) => ModelKind::Student,
        }
    }

    pub fn param_specs(&self) -> Vec<ParamSpec> {
        match self {
            Self::TeacherA(c) => c.param_specs(),
            Self::TeacherB(c) => c.param_specs(),
            Self::Student(c) => c.param_specs(),
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        match self {
            Self::TeacherA(c) => c.validate(),
            Self::TeacherB(c) => c.validate(),
            Self::Student(c) => c.validate(),
        }
    }

    /// Fresh store with every parameter initialised.
    pub fn init_store(&self, rng: &mut ModelRng) -> Result<ParamStore, ModelError> {
        self.validate()?;
        layout::init_store(&self.param_specs(), rng)
    }
}
