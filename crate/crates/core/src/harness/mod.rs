//! Run directories, stage orchestration and resumption.
//!
//! A run directory holds a frozen copy of the config and its inputs, a
//! manifest with per-stage completion flags, and one atomically written
//! artifact per work item:
//!
//! ```text
//! config.json  manifest.json  calls.jsonl  report.json  report.md
//! inputs/                      tree, questions, scripts, prompt overrides
//! tags/<question>.json         tagger output for untagged questions
//! examples/<leaf>.json         forge record per knowledge path
//! transcripts/<question>/<session>.transcript
//! attempts/<question>/<unit>.jsonl   (or <unit>.failed.json)
//! ```
//!
//! An item whose file exists is never recomputed, so an interrupted stage
//! resumes where it stopped.

mod config;
mod manifest;
mod pipeline;
mod run;
mod stages;

use std::path::PathBuf;

use thiserror::Error;

pub use config::{
    DataConfig, EvaluationSection, ForgeSection, HarnessConfig, Roles, TaggingSection,
    TeachingSection,
};
pub use manifest::{RunManifest, Stage, StageFlags};
pub use pipeline::{full_pipeline, resume, PipelineOutcome};
pub use run::{init_run, FrozenConfig, Gateways, Run, RunDir};
pub use stages::{
    build_report, exclusions, plan_resume, recompute_report, run_stage, session_id, Limits,
    ResumePlan, StageReport, UnitFailure,
};

pub const EXIT_OK: u8 = 0;
pub const EXIT_VALIDATION: u8 = 1;
pub const EXIT_PROVIDER: u8 = 2;
pub const EXIT_INCONSISTENT: u8 = 3;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("invalid input data: {0}")]
    Data(String),
    #[error("run directory {} exists and is not empty", .0.display())]
    RunExists(PathBuf),
    #[error("stage `{stage}` cannot run before `{missing}` is complete")]
    OutOfOrder { stage: Stage, missing: Stage },
    #[error("provider failure: {0}")]
    Provider(String),
    #[error("inconsistent run state: {0}")]
    Inconsistent(String),
    #[error("cannot aggregate: {0}")]
    Aggregate(#[from] crate::evaluator::AggregateError),
    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl HarnessError {
    pub fn exit_code(&self) -> u8 {
        use crate::evaluator::AggregateError;
        match self {
            HarnessError::Config(_)
            | HarnessError::Data(_)
            | HarnessError::RunExists(_)
            | HarnessError::OutOfOrder { .. }
            | HarnessError::Aggregate(AggregateError::NoQuestions) => EXIT_VALIDATION,
            HarnessError::Provider(_) => EXIT_PROVIDER,
            HarnessError::Inconsistent(_)
            | HarnessError::Aggregate(_)
            | HarnessError::Io { .. } => EXIT_INCONSISTENT,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Self {
        let path = path.into();
        move |source| HarnessError::Io { path, source }
    }
}
