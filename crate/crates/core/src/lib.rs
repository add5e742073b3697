//! Dual-teacher knowledge distillation for function-level vulnerability
//! detection.
//!
//! A convolutional token classifier (teacher A) and a graph network over
//! syntax-structure tokens (teacher B) are trained first, frozen, and then
//! distilled into a small transformer encoder whose `[dia]`/`[dib]` positions
//! mimic the teachers while `[cls]` learns the label.

pub mod numerics;
pub mod corpusgen;
pub mod frontend;
pub mod tokenizer;
pub mod graphs;
pub mod models;
pub mod evaluation;
pub mod training;
