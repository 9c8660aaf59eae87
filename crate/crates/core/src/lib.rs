//! Harness for measuring how well a language model teaches.
//!
//! A teacher model is briefed with syllabus knowledge points (never the
//! target question), holds a multi-turn dialogue with a fixed student model,
//! and is scored by the student's Pass@k change on held-out questions.

pub mod artifact;
pub mod digest;
pub mod evaluator;
pub mod forge;
pub mod gateway;
pub mod harness;
pub mod knowledge;
pub mod leakage;
pub mod prompt;
pub mod reply;
pub mod tagger;
pub mod teaching;
pub mod text;

#[cfg(test)]
pub(crate) mod fixtures;
