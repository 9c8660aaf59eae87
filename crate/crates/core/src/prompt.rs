//! Prompt templates with named `{placeholder}` slots.
//!
//! Only `{identifier}` sequences are placeholders, so literal JSON examples
//! inside a body (`{"knowledge_points": ...}`) pass through untouched.
//! Rendering is single-pass: substituted values are never rescanned.

use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TemplateError {
    #[error("template `{template}` uses undeclared placeholder `{{{placeholder}}}`")]
    Undeclared {
        template: String,
        placeholder: String,
    },
    #[error("template `{template}` left placeholder `{{{placeholder}}}` unresolved")]
    Unresolved {
        template: String,
        placeholder: String,
    },
    #[error("cannot read template override {path}: {message}")]
    Io { path: String, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Language {
    #[default]
    Zh,
    En,
}

impl Language {
    pub fn code(self) -> &'static str {
        match self {
            Language::Zh => "zh",
            Language::En => "en",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    pub name: String,
    pub body: String,
    pub language: Language,
    placeholders: Vec<String>,
}

/// Byte spans of every `{identifier}` in `body`, with the identifier.
fn placeholder_spans(body: &str) -> Vec<(usize, usize, &str)> {
    let bytes = body.as_bytes();
    let mut spans = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'{' {
            let start = i + 1;
            let mut j = start;
            while j < bytes.len() && (bytes[j].is_ascii_alphanumeric() || bytes[j] == b'_') {
                j += 1;
            }
            let ident_ok = j > start && !bytes[start].is_ascii_digit();
            if ident_ok && j < bytes.len() && bytes[j] == b'}' {
                spans.push((i, j + 1, &body[start..j]));
                i = j + 1;
                continue;
            }
        }
        i += 1;
    }
    spans
}

impl PromptTemplate {
    pub fn new(
        name: impl Into<String>,
        body: impl Into<String>,
        language: Language,
        declared: &[&str],
    ) -> Result<Self, TemplateError> {
        let name = name.into();
        let body = body.into();
        for (_, _, ident) in placeholder_spans(&body) {
            if !declared.contains(&ident) {
                return Err(TemplateError::Undeclared {
                    template: name,
                    placeholder: ident.to_string(),
                });
            }
        }
        Ok(Self {
            name,
            body,
            language,
            placeholders: declared.iter().map(|s| s.to_string()).collect(),
        })
    }

    pub fn declared(&self) -> &[String] {
        &self.placeholders
    }

    /// Placeholders actually present in the body.
    pub fn used(&self) -> BTreeSet<&str> {
        placeholder_spans(&self.body)
            .into_iter()
            .map(|(_, _, p)| p)
            .collect()
    }

    pub fn render(&self, bindings: &[(&str, &str)]) -> Result<String, TemplateError> {
        let mut out = String::with_capacity(self.body.len() + 256);
        let mut last = 0;
        for (start, end, ident) in placeholder_spans(&self.body) {
            out.push_str(&self.body[last..start]);
            let value = bindings
                .iter()
                .find(|(k, _)| *k == ident)
                .map(|(_, v)| *v)
                .ok_or_else(|| TemplateError::Unresolved {
                    template: self.name.clone(),
                    placeholder: ident.to_string(),
                })?;
            out.push_str(value);
            last = end;
        }
        out.push_str(&self.body[last..]);
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TemplateKind {
    Tagging,
    TeacherKnowledge,
    TeacherExamples,
    Student,
    AnswerQuestion,
    GenerateItem,
    NormalizeRetrieved,
    VerifyItem,
}

impl TemplateKind {
    pub const ALL: [TemplateKind; 8] = [
        TemplateKind::Tagging,
        TemplateKind::TeacherKnowledge,
        TemplateKind::TeacherExamples,
        TemplateKind::Student,
        TemplateKind::AnswerQuestion,
        TemplateKind::GenerateItem,
        TemplateKind::NormalizeRetrieved,
        TemplateKind::VerifyItem,
    ];

    pub fn file_name(self) -> &'static str {
        match self {
            TemplateKind::Tagging => "tagging",
            TemplateKind::TeacherKnowledge => "teacher_knowledge",
            TemplateKind::TeacherExamples => "teacher_examples",
            TemplateKind::Student => "student",
            TemplateKind::AnswerQuestion => "answer_question",
            TemplateKind::GenerateItem => "generate_item",
            TemplateKind::NormalizeRetrieved => "normalize_retrieved",
            TemplateKind::VerifyItem => "verify_item",
        }
    }

    pub fn placeholders(self) -> &'static [&'static str] {
        match self {
            TemplateKind::Tagging => &["field", "question", "answer", "knowledge_points"],
            TemplateKind::TeacherKnowledge
            | TemplateKind::TeacherExamples
            | TemplateKind::Student => &["field", "knowledge_content"],
            TemplateKind::AnswerQuestion => &["field", "question"],
            TemplateKind::GenerateItem => &[
                "field",
                "knowledge_path",
                "level",
                "level_rubric",
                "constraints",
                "feedback",
            ],
            TemplateKind::NormalizeRetrieved => &[
                "field",
                "knowledge_path",
                "level",
                "level_rubric",
                "candidates",
            ],
            TemplateKind::VerifyItem => &[
                "field",
                "knowledge_path",
                "level",
                "level_rubric",
                "statement",
                "answer",
                "solution",
            ],
        }
    }

    fn builtin(self, language: Language) -> &'static str {
        macro_rules! pick {
            ($file:literal) => {
                match language {
                    Language::Zh => include_str!(concat!("../assets/prompts/zh/", $file, ".txt")),
                    Language::En => include_str!(concat!("../assets/prompts/en/", $file, ".txt")),
                }
            };
        }
        match self {
            TemplateKind::Tagging => pick!("tagging"),
            TemplateKind::TeacherKnowledge => pick!("teacher_knowledge"),
            TemplateKind::TeacherExamples => pick!("teacher_examples"),
            TemplateKind::Student => pick!("student"),
            TemplateKind::AnswerQuestion => pick!("answer_question"),
            TemplateKind::GenerateItem => pick!("generate_item"),
            TemplateKind::NormalizeRetrieved => pick!("normalize_retrieved"),
            TemplateKind::VerifyItem => pick!("verify_item"),
        }
    }
}

/// The full set of templates for one language.
#[derive(Debug, Clone)]
pub struct TemplateSet {
    language: Language,
    templates: HashMap<TemplateKind, PromptTemplate>,
}

impl TemplateSet {
    pub fn builtin(language: Language) -> Self {
        let templates = TemplateKind::ALL
            .iter()
            .map(|&kind| {
                let t = PromptTemplate::new(
                    kind.file_name(),
                    kind.builtin(language).trim_end(),
                    language,
                    kind.placeholders(),
                )
                .expect("shipped templates declare their placeholders");
                (kind, t)
            })
            .collect();
        Self {
            language,
            templates,
        }
    }

    /// Builtins, with any `{dir}/{lang}/{name}.txt` file replacing its body.
    pub fn with_overrides(language: Language, dir: &Path) -> Result<Self, TemplateError> {
        let mut set = Self::builtin(language);
        for kind in TemplateKind::ALL {
            let path = dir
                .join(language.code())
                .join(format!("{}.txt", kind.file_name()));
            if !path.exists() {
                continue;
            }
            let body = std::fs::read_to_string(&path).map_err(|e| TemplateError::Io {
                path: path.display().to_string(),
                message: e.to_string(),
            })?;
            let t = PromptTemplate::new(
                kind.file_name(),
                body.trim_end(),
                language,
                kind.placeholders(),
            )?;
            set.templates.insert(kind, t);
        }
        Ok(set)
    }

    pub fn language(&self) -> Language {
        self.language
    }

    pub fn get(&self, kind: TemplateKind) -> &PromptTemplate {
        &self.templates[&kind]
    }

    pub fn render(
        &self,
        kind: TemplateKind,
        bindings: &[(&str, &str)],
    ) -> Result<String, TemplateError> {
        self.get(kind).render(bindings)
    }
}
