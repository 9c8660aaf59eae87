use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::knowledge::{ExampleProblem, KnowledgePath, Question};
use crate::leakage::contains_statement;
use crate::prompt::{Language, TemplateError, TemplateKind, TemplateSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TeachingMode {
    KnowledgeOnly,
    WithExamples,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum BriefingError {
    #[error("briefing has no knowledge points")]
    NoKnowledge,
    #[error("with_examples mode needs at least one example")]
    NoExamples,
    #[error("example for `{0}` is not verified")]
    UnverifiedExample(String),
    #[error("briefing field `{0}` contains the target question statement")]
    Leak(&'static str),
}

/// Everything the teacher is told. Never carries the target question.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TeacherBriefing {
    pub field: String,
    /// One path display per line.
    pub knowledge_content: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub examples: Vec<ExampleProblem>,
    pub mode: TeachingMode,
}

pub fn render_knowledge(paths: &[KnowledgePath]) -> String {
    paths
        .iter()
        .map(|p| format!("- {}", p.display))
        .collect::<Vec<_>>()
        .join("\n")
}

impl TeacherBriefing {
    /// Builds a briefing for `target`, rejecting it if any field contains
    /// the target's statement verbatim or with whitespace ignored.
    pub fn new(
        field: impl Into<String>,
        paths: &[KnowledgePath],
        examples: Vec<ExampleProblem>,
        mode: TeachingMode,
        target: &Question,
    ) -> Result<Self, BriefingError> {
        let briefing = Self {
            field: field.into(),
            knowledge_content: render_knowledge(paths),
            examples: match mode {
                TeachingMode::KnowledgeOnly => Vec::new(),
                TeachingMode::WithExamples => examples,
            },
            mode,
        };
        briefing.check(&target.statement)?;
        Ok(briefing)
    }

    pub fn check(&self, statement: &str) -> Result<(), BriefingError> {
        if self.knowledge_content.trim().is_empty() {
            return Err(BriefingError::NoKnowledge);
        }
        if self.mode == TeachingMode::WithExamples && self.examples.is_empty() {
            return Err(BriefingError::NoExamples);
        }
        if let Some(e) = self.examples.iter().find(|e| !e.verified) {
            return Err(BriefingError::UnverifiedExample(e.path.display.clone()));
        }
        let fields = [
            ("field", self.field.as_str()),
            ("knowledge_content", &self.knowledge_content),
        ];
        for (name, text) in fields {
            if contains_statement(text, statement) {
                return Err(BriefingError::Leak(name));
            }
        }
        for e in &self.examples {
            for text in [&e.statement, &e.answer, &e.solution, &e.path.display] {
                if contains_statement(text, statement) {
                    return Err(BriefingError::Leak("examples"));
                }
            }
        }
        Ok(())
    }

    fn examples_text(&self, language: Language) -> String {
        let mut out = String::new();
        for (i, e) in self.examples.iter().enumerate() {
            let n = i + 1;
            let level = e.level.get();
            let block = match language {
                Language::Zh => format!(
                    "\n【例题{n}】（第{level}级，知识点：{}）\n题目：{}\n答案：{}\n解答：{}\n",
                    e.path.display, e.statement, e.answer, e.solution
                ),
                Language::En => format!(
                    "\n[Example {n}] (Level {level}, knowledge point: {})\nProblem: {}\nAnswer: {}\nSolution: {}\n",
                    e.path.display, e.statement, e.answer, e.solution
                ),
            };
            out.push_str(&block);
        }
        out
    }
}

/// Teacher system message for the briefing's mode.
pub fn build_teacher_prompt(
    briefing: &TeacherBriefing,
    templates: &TemplateSet,
) -> Result<String, TemplateError> {
    match briefing.mode {
        TeachingMode::KnowledgeOnly => templates.render(
            TemplateKind::TeacherKnowledge,
            &[
                ("field", &briefing.field),
                ("knowledge_content", &briefing.knowledge_content),
            ],
        ),
        TeachingMode::WithExamples => {
            let content = format!(
                "{}\n{}",
                briefing.knowledge_content,
                briefing.examples_text(templates.language())
            );
            templates.render(
                TemplateKind::TeacherExamples,
                &[
                    ("field", &briefing.field),
                    ("knowledge_content", content.trim_end()),
                ],
            )
        }
    }
}

#[derive(Debug, Error)]
pub enum StudentPromptError {
    #[error("student prompt needs knowledge points")]
    NoKnowledge,
    #[error(transparent)]
    Template(#[from] TemplateError),
}

pub fn build_student_prompt(
    field: &str,
    knowledge_content: &str,
    templates: &TemplateSet,
) -> Result<String, StudentPromptError> {
    if knowledge_content.trim().is_empty() {
        return Err(StudentPromptError::NoKnowledge);
    }
    Ok(templates.render(
        TemplateKind::Student,
        &[("field", field), ("knowledge_content", knowledge_content)],
    )?)
}
