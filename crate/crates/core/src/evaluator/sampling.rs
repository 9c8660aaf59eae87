use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::grading::{grade_answer, GradingPolicy, UngradableQuestion};
use crate::gateway::{ChatMessage, Gateway, GatewayError, SamplingParams};
use crate::knowledge::Question;
use crate::prompt::{TemplateError, TemplateKind, TemplateSet};
use crate::teaching::{TeachingSession, BASELINE_SESSION_ID};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    /// No teaching, no knowledge points.
    Pre,
    /// Knowledge points in the student's system prompt, no dialogue.
    KnowledgeOnly,
    /// After a teaching session, with the transcript in context.
    Post,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Pre => "pre",
            Phase::KnowledgeOnly => "knowledge_only",
            Phase::Post => "post",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttemptRecord {
    pub question_id: String,
    /// Teaching session id, or the baseline marker for pre/knowledge_only.
    pub session_id: String,
    pub phase: Phase,
    pub sample_index: u32,
    pub raw_reply: String,
    pub extracted: Option<String>,
    pub correct: bool,
}

pub const DEFAULT_KS: [u32; 4] = [1, 4, 16, 64];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationConfig {
    pub sessions: u32,
    pub samples_per_session: u32,
    pub ks: Vec<u32>,
    pub student_params: SamplingParams,
    /// Sample `i` is drawn with seed `base + i` when set.
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub grading: GradingPolicy,
    /// Extra draws allowed per batch to replace failed samples.
    pub surplus: u32,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        Self {
            sessions: 3,
            samples_per_session: 64,
            ks: DEFAULT_KS.to_vec(),
            student_params: SamplingParams::default(),
            seed: None,
            grading: GradingPolicy::MultipleChoice,
            surplus: 8,
        }
    }
}

impl EvaluationConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.samples_per_session == 0 {
            return Err("samples_per_session must be at least 1".into());
        }
        if self.ks.is_empty() {
            return Err("ks is empty".into());
        }
        if self.ks.contains(&0) {
            return Err("every k must be at least 1".into());
        }
        let max = *self.ks.iter().max().expect("non-empty");
        if max > self.samples_per_session {
            return Err(format!(
                "max(ks) = {max} exceeds samples_per_session = {}",
                self.samples_per_session
            ));
        }
        self.student_params.validate()
    }

    fn params_for(&self, sample_index: u32) -> SamplingParams {
        let seed = self
            .seed
            .map(|base| base.wrapping_add(u64::from(sample_index)));
        self.student_params.clone().with_seed(seed)
    }
}

/// What the student has in context when the question is posed.
#[derive(Debug, Clone, Copy)]
pub enum StudentContext<'a> {
    Pre,
    /// Rendered student system prompt carrying the knowledge points.
    KnowledgeOnly {
        student_system: &'a str,
    },
    Post {
        session: &'a TeachingSession,
    },
}

impl StudentContext<'_> {
    pub fn phase(&self) -> Phase {
        match self {
            StudentContext::Pre => Phase::Pre,
            StudentContext::KnowledgeOnly { .. } => Phase::KnowledgeOnly,
            StudentContext::Post { .. } => Phase::Post,
        }
    }

    pub fn session_id(&self) -> &str {
        match self {
            StudentContext::Post { session } => &session.session_id,
            _ => BASELINE_SESSION_ID,
        }
    }
}

#[derive(Debug, Error)]
pub enum SampleError {
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error(transparent)]
    Ungradable(#[from] UngradableQuestion),
    #[error(transparent)]
    Fatal(GatewayError),
    #[error("{missing} of {n} samples for `{question_id}` still failing after the surplus; last error: {last_error}")]
    Partial {
        question_id: String,
        n: u32,
        missing: usize,
        records: Vec<AttemptRecord>,
        last_error: String,
    },
}

/// The user message posing `question`; identical in every phase.
pub fn question_message(
    question: &Question,
    templates: &TemplateSet,
) -> Result<String, TemplateError> {
    templates.render(
        TemplateKind::AnswerQuestion,
        &[
            ("field", question.subject.field_label(templates.language())),
            ("question", &question.render()),
        ],
    )
}

pub fn student_messages(context: StudentContext<'_>, question_prompt: &str) -> Vec<ChatMessage> {
    let mut messages = Vec::new();
    match context {
        StudentContext::Pre => {}
        StudentContext::KnowledgeOnly { student_system } => {
            messages.push(ChatMessage::system(student_system))
        }
        StudentContext::Post { session } => {
            messages.push(ChatMessage::system(session.student_system.clone()));
            messages.extend(session.student_view());
        }
    }
    messages.push(ChatMessage::user(question_prompt));
    messages
}

/// Draws `samples_per_session` graded answers. Samples run concurrently under
/// the gateway's bound; failed ones are redrawn in index order while the
/// surplus lasts. Records come back ordered by sample index.
pub async fn sample_answers(
    student: &Gateway,
    question: &Question,
    context: StudentContext<'_>,
    templates: &TemplateSet,
    config: &EvaluationConfig,
) -> Result<Vec<AttemptRecord>, SampleError> {
    let prompt = question_message(question, templates)?;
    let messages = student_messages(context, &prompt);
    let n = config.samples_per_session;

    let draws = (0..n).map(|i| {
        let messages = &messages;
        async move {
            (
                i,
                student.complete_chat(messages, &config.params_for(i)).await,
            )
        }
    });
    let mut results = futures::future::join_all(draws).await;

    let mut surplus = config.surplus;
    let mut last_error = String::new();
    for slot in results.iter_mut() {
        while surplus > 0 && matches!(&slot.1, Err(e) if !e.is_fatal()) {
            surplus -= 1;
            slot.1 = student
                .complete_chat(&messages, &config.params_for(slot.0))
                .await;
        }
    }

    let mut records = Vec::with_capacity(n as usize);
    let mut missing = 0;
    for (i, result) in results {
        match result {
            Ok(out) => {
                let grade = grade_answer(&out.content, question)?;
                records.push(AttemptRecord {
                    question_id: question.id.clone(),
                    session_id: context.session_id().to_string(),
                    phase: context.phase(),
                    sample_index: i,
                    raw_reply: out.content,
                    extracted: grade.extracted,
                    correct: grade.correct,
                });
            }
            Err(e) if e.is_fatal() => return Err(SampleError::Fatal(e)),
            Err(e) => {
                missing += 1;
                last_error = e.to_string();
            }
        }
    }
    if missing > 0 {
        return Err(SampleError::Partial {
            question_id: question.id.clone(),
            n,
            missing,
            records,
            last_error,
        });
    }
    Ok(records)
}
