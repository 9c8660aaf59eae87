//! Student accuracy before and after teaching, as Pass@k.

mod grading;
mod pass_at_k;
mod report;
mod sampling;

pub use grading::{extract_choice, grade_answer, Grade, GradingPolicy, UngradableQuestion};
pub use pass_at_k::{pass_at_k, pass_at_k_exact, PassAtK, PassAtKError};
pub use report::{
    aggregate, render_csv, render_markdown, AggregateError, Deltas, EvaluationReport, KMap,
    PhaseResult, PostResult, QuestionScore, ReportSpec,
};
pub use sampling::{
    question_message, sample_answers, student_messages, AttemptRecord, EvaluationConfig, Phase,
    SampleError, StudentContext, DEFAULT_KS,
};

#[cfg(test)]
mod tests;
