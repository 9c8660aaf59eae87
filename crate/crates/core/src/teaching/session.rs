use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::briefing::{
    build_student_prompt, build_teacher_prompt, StudentPromptError, TeacherBriefing,
};
use crate::gateway::{duration_ms, ChatMessage, Gateway, GatewayError, SamplingParams};
use crate::prompt::{TemplateError, TemplateSet};

pub const DEFAULT_TURN_CAP: u32 = 30;
pub const BASELINE_SESSION_ID: &str = "baseline";

/// True when the end-of-teaching token appears in `text` after lowercasing,
/// replacing HTML-style tags and markup characters with spaces and
/// collapsing whitespace.
pub fn detect_teach_done(text: &str) -> bool {
    let lower = text.to_lowercase();
    let mut cleaned = String::with_capacity(lower.len());
    let mut rest = lower.as_str();
    while let Some(c) = rest.chars().next() {
        if let Some(len) = tag_len(rest) {
            cleaned.push(' ');
            rest = &rest[len..];
            continue;
        }
        cleaned.push(if is_markup(c) { ' ' } else { c });
        rest = &rest[c.len_utf8()..];
    }
    crate::text::collapse_whitespace(&cleaned).contains("teach done")
}

/// Byte length of a short `<tag>` or `</tag>` at the start of `s`.
fn tag_len(s: &str) -> Option<usize> {
    let body = s.strip_prefix('<')?;
    let body = body.strip_prefix('/').unwrap_or(body);
    let name_len = body
        .bytes()
        .take_while(|b| b.is_ascii_alphanumeric())
        .count();
    if name_len == 0 || name_len > 10 || body.as_bytes().get(name_len) != Some(&b'>') {
        return None;
    }
    Some(s.len() - body.len() + name_len + 1)
}

fn is_markup(c: char) -> bool {
    matches!(
        c,
        '*' | '_'
            | '`'
            | '~'
            | '#'
            | '>'
            | '<'
            | '['
            | ']'
            | '|'
            | '"'
            | '\''
            | '“'
            | '”'
            | '「'
            | '」'
            | '【'
            | '】'
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Speaker {
    Teacher,
    Student,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DialogueTurn {
    pub index: usize,
    pub speaker: Speaker,
    pub content: String,
    #[serde(rename = "latency_ms", with = "duration_ms")]
    pub latency: Duration,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Token,
    TurnCap,
    ProviderError,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TeachingSession {
    pub session_id: String,
    pub question_id: String,
    pub briefing: TeacherBriefing,
    /// The exact system messages sent, kept for audits.
    pub teacher_system: String,
    pub student_system: String,
    pub turns: Vec<DialogueTurn>,
    pub termination: Termination,
    pub turn_cap: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl TeachingSession {
    pub fn teacher_turns(&self) -> usize {
        self.turns
            .iter()
            .filter(|t| t.speaker == Speaker::Teacher)
            .count()
    }

    pub fn is_baseline(&self) -> bool {
        self.turns.is_empty()
    }

    /// Turns as the student sees them: teacher lines as the interlocutor.
    pub fn student_view(&self) -> Vec<ChatMessage> {
        self.turns
            .iter()
            .map(|t| match t.speaker {
                Speaker::Teacher => ChatMessage::user(t.content.clone()),
                Speaker::Student => ChatMessage::assistant(t.content.clone()),
            })
            .collect()
    }

    /// Structural invariants: alternation from the teacher, contiguous
    /// indices, the teacher-turn bound, and a termination consistent with
    /// the transcript tail.
    pub fn check(&self) -> Result<(), String> {
        for (i, t) in self.turns.iter().enumerate() {
            if t.index != i {
                return Err(format!("turn {i} has index {}", t.index));
            }
            let expected = if i % 2 == 0 {
                Speaker::Teacher
            } else {
                Speaker::Student
            };
            if t.speaker != expected {
                return Err(format!(
                    "turn {i} is by {:?}, expected {expected:?}",
                    t.speaker
                ));
            }
        }
        let teacher_turns = self.teacher_turns();
        if teacher_turns > self.turn_cap as usize {
            return Err(format!(
                "{teacher_turns} teacher turns exceed cap {}",
                self.turn_cap
            ));
        }
        let last = self.turns.last();
        match self.termination {
            Termination::Token => {
                if let Some(t) = last {
                    if t.speaker != Speaker::Teacher || !detect_teach_done(&t.content) {
                        return Err(
                            "termination is token but the last teacher turn lacks it".into()
                        );
                    }
                }
            }
            Termination::TurnCap => {
                if teacher_turns != self.turn_cap as usize
                    || last.map(|t| t.speaker) != Some(Speaker::Teacher)
                {
                    return Err(
                        "termination is turn_cap but the transcript does not end at the cap".into(),
                    );
                }
            }
            Termination::ProviderError => {}
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SessionConfig {
    pub turn_cap: u32,
    pub teacher_params: SamplingParams,
    pub student_params: SamplingParams,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            turn_cap: DEFAULT_TURN_CAP,
            teacher_params: SamplingParams::default(),
            student_params: SamplingParams::default(),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum SessionError {
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error(transparent)]
    StudentPrompt(#[from] StudentPromptError),
    #[error("turn_cap must be at least 1")]
    ZeroCap,
    #[error("cannot persist transcript: {0}")]
    Io(#[from] std::io::Error),
    /// A provider failure that retrying cannot fix; nothing is persisted.
    #[error(transparent)]
    Fatal(GatewayError),
}

/// Teacher and student endpoints plus the settings shared by every session.
pub struct TeachingEngine<'a> {
    pub teacher: &'a Gateway,
    pub student: &'a Gateway,
    pub templates: &'a TemplateSet,
    pub config: SessionConfig,
}

impl TeachingEngine<'_> {
    /// Runs one dialogue. The teacher opens; each side sees its own lines as
    /// `assistant` and the other's as `user`. Ends on the token, at the cap,
    /// or at the first provider failure. When `out` is given the transcript
    /// is written there before returning. Fatal provider errors (bad
    /// credentials, rejected requests) abort instead of ending the session.
    pub async fn run_session(
        &self,
        briefing: TeacherBriefing,
        question_id: &str,
        session_id: &str,
        out: Option<&Path>,
    ) -> Result<TeachingSession, SessionError> {
        let config = &self.config;
        if config.turn_cap == 0 {
            return Err(SessionError::ZeroCap);
        }
        let teacher_system = build_teacher_prompt(&briefing, self.templates)?;
        let student_system =
            build_student_prompt(&briefing.field, &briefing.knowledge_content, self.templates)?;

        let mut teacher_ctx = vec![ChatMessage::system(teacher_system.clone())];
        let mut student_ctx = vec![ChatMessage::system(student_system.clone())];
        let mut turns: Vec<DialogueTurn> = Vec::new();
        let mut teacher_turns = 0;
        let mut error = None;

        let termination = loop {
            let reply = match speak(self.teacher, &teacher_ctx, &config.teacher_params).await {
                Ok(r) => r,
                Err(Spoken::Fatal(e)) => return Err(SessionError::Fatal(e)),
                Err(e) => {
                    error = Some(format!("teacher: {e}"));
                    break Termination::ProviderError;
                }
            };
            teacher_turns += 1;
            teacher_ctx.push(ChatMessage::assistant(reply.0.clone()));
            student_ctx.push(ChatMessage::user(reply.0.clone()));
            let done = detect_teach_done(&reply.0);
            push_turn(&mut turns, Speaker::Teacher, reply);
            if done {
                break Termination::Token;
            }
            if teacher_turns >= config.turn_cap {
                break Termination::TurnCap;
            }

            let reply = match speak(self.student, &student_ctx, &config.student_params).await {
                Ok(r) => r,
                Err(Spoken::Fatal(e)) => return Err(SessionError::Fatal(e)),
                Err(e) => {
                    error = Some(format!("student: {e}"));
                    break Termination::ProviderError;
                }
            };
            student_ctx.push(ChatMessage::assistant(reply.0.clone()));
            teacher_ctx.push(ChatMessage::user(reply.0.clone()));
            push_turn(&mut turns, Speaker::Student, reply);
        };

        if let Some(e) = &error {
            tracing::warn!(
                question = question_id,
                session = session_id,
                "session ended early: {e}"
            );
        }
        let session = TeachingSession {
            session_id: session_id.to_string(),
            question_id: question_id.to_string(),
            briefing,
            teacher_system,
            student_system,
            turns,
            termination,
            turn_cap: config.turn_cap,
            error,
        };
        if let Some(path) = out {
            super::transcript::write_transcript(path, &session)?;
        }
        Ok(session)
    }
}

enum Spoken {
    Fatal(GatewayError),
    Failed(String),
}

impl std::fmt::Display for Spoken {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Spoken::Fatal(e) => e.fmt(f),
            Spoken::Failed(e) => f.write_str(e),
        }
    }
}

async fn speak(
    gateway: &Gateway,
    context: &[ChatMessage],
    params: &SamplingParams,
) -> Result<(String, Duration), Spoken> {
    let out = gateway.complete_chat(context, params).await.map_err(|e| {
        if e.is_fatal() {
            Spoken::Fatal(e)
        } else {
            Spoken::Failed(e.to_string())
        }
    })?;
    if out.content.trim().is_empty() {
        return Err(Spoken::Failed("empty reply".into()));
    }
    Ok((out.content, out.latency))
}

fn push_turn(
    turns: &mut Vec<DialogueTurn>,
    speaker: Speaker,
    (content, latency): (String, Duration),
) {
    turns.push(DialogueTurn {
        index: turns.len(),
        speaker,
        content,
        latency,
    });
}

/// The no-teaching condition: no turns at all.
pub fn baseline_session(
    briefing: TeacherBriefing,
    templates: &TemplateSet,
    question_id: &str,
) -> Result<TeachingSession, SessionError> {
    let teacher_system = build_teacher_prompt(&briefing, templates)?;
    let student_system =
        build_student_prompt(&briefing.field, &briefing.knowledge_content, templates)?;
    Ok(TeachingSession {
        session_id: BASELINE_SESSION_ID.to_string(),
        question_id: question_id.to_string(),
        briefing,
        teacher_system,
        student_system,
        turns: Vec::new(),
        termination: Termination::Token,
        turn_cap: DEFAULT_TURN_CAP,
        error: None,
    })
}
